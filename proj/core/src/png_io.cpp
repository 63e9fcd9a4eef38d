#include "glandsynth/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "glandsynth/errors.hpp"

namespace gsyn {

namespace {

void on_error(png_structp png, png_const_charp msg) {
    auto* err = static_cast<std::string*>(png_get_error_ptr(png));
    *err = msg;
    png_longjmp(png, 1);
}

void on_warning(png_structp, png_const_charp) {}

struct Reader {
    const std::string* bytes;
    std::size_t pos = 0;
};

void read_fn(png_structp png, png_bytep out, png_size_t n) {
    auto* r = static_cast<Reader*>(png_get_io_ptr(png));
    if (r->pos + n > r->bytes->size()) png_error(png, "truncated PNG stream");
    std::memcpy(out, r->bytes->data() + r->pos, n);
    r->pos += n;
}

void write_fn(png_structp png, png_bytep data, png_size_t n) {
    static_cast<std::string*>(png_get_io_ptr(png))->append(reinterpret_cast<const char*>(data), n);
}

void flush_fn(png_structp) {}

}  // namespace

std::string encode_png(const Gray8& image) {
    if (image.rows <= 0 || image.cols <= 0) throw IoError("encode_png: empty image");
    std::string out;
    std::string err;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, on_error, on_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (info == nullptr) {
        png_destroy_write_struct(&png, nullptr);
        throw IoError("encode_png: libpng initialisation failed");
    }
    std::vector<png_bytep> rows(static_cast<std::size_t>(image.rows));
    for (int r = 0; r < image.rows; ++r) {
        rows[static_cast<std::size_t>(r)] = const_cast<png_bytep>(image.px.data() + static_cast<std::size_t>(r) * image.cols);
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError("encode_png: " + err);
    }
    png_set_write_fn(png, &out, write_fn, flush_fn);
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.cols), static_cast<png_uint_32>(image.rows), 8,
                 PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Gray8 decode_png(const std::string& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
        throw IoError("decode_png: not a PNG stream");
    }
    std::string err;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_error, on_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (info == nullptr) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw IoError("decode_png: libpng initialisation failed");
    }
    Reader reader{&bytes};
    Gray8 out;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("decode_png: " + err);
    }
    png_set_read_fn(png, &reader, read_fn);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE) {
        png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    }
    png_read_update_info(png, info);
    out = Gray8(static_cast<int>(png_get_image_height(png, info)), static_cast<int>(png_get_image_width(png, info)));
    rows.resize(static_cast<std::size_t>(out.rows));
    for (int r = 0; r < out.rows; ++r) rows[static_cast<std::size_t>(r)] = out.px.data() + static_cast<std::size_t>(r) * out.cols;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const std::filesystem::path& path, const Gray8& image) {
    const std::string bytes = encode_png(image);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("write_png: cannot open " + path.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write_png: write failed for " + path.string());
}

Gray8 read_png(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("read_png: cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    try {
        return decode_png(bytes);
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

Gray8 mask_to_gray(const Mask& mask) {
    Gray8 g(mask.rows, mask.cols);
    for (std::size_t i = 0; i < mask.size(); ++i) g.px[i] = mask.px[i] ? 255 : 0;
    return g;
}

Mask gray_to_mask(const Gray8& gray) {
    Mask m(gray.rows, gray.cols);
    for (std::size_t i = 0; i < gray.size(); ++i) m.px[i] = gray.px[i] ? 1 : 0;
    return m;
}

Gray8 image_to_gray(const Image& image) {
    Gray8 g(image.rows, image.cols);
    for (std::size_t i = 0; i < image.size(); ++i) {
        const float v = std::clamp(image.px[i], 0.0f, 1.0f);
        g.px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
    return g;
}

Image gray_to_image(const Gray8& gray) {
    Image im(gray.rows, gray.cols);
    for (std::size_t i = 0; i < gray.size(); ++i) im.px[i] = static_cast<float>(gray.px[i]) / 255.0f;
    return im;
}

}  // namespace gsyn
