#include "glandsynth/nn/checkpoint.hpp"

#include <array>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "glandsynth/errors.hpp"

namespace gsyn::nn {

namespace {

constexpr std::array<char, 8> kMagic = {'G', 'S', 'Y', 'N', 'C', 'K', 'P', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw IoError("checkpoint: truncated file");
    return v;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& meta,
                     const std::vector<const Tensor*>& tensors) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot write " + path.string());
    os.write(kMagic.data(), kMagic.size());
    const std::string text = meta.dump();
    write_pod(os, static_cast<std::uint64_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    write_pod(os, static_cast<std::uint64_t>(tensors.size()));
    for (const Tensor* t : tensors) {
        for (int d : {t->n(), t->c(), t->h(), t->w()}) write_pod(os, static_cast<std::int32_t>(d));
        os.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->size() * sizeof(float)));
    }
    if (!os) throw IoError("checkpoint: write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open " + path.string());
    std::array<char, 8> magic{};
    is.read(magic.data(), magic.size());
    if (!is || magic != kMagic) throw IoError("checkpoint: bad magic in " + path.string());
    Checkpoint ck;
    const auto meta_len = read_pod<std::uint64_t>(is);
    std::string text(meta_len, '\0');
    is.read(text.data(), static_cast<std::streamsize>(meta_len));
    if (!is) throw IoError("checkpoint: truncated metadata");
    ck.meta = nlohmann::json::parse(text);
    const auto count = read_pod<std::uint64_t>(is);
    ck.tensors.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const auto n = read_pod<std::int32_t>(is);
        const auto c = read_pod<std::int32_t>(is);
        const auto h = read_pod<std::int32_t>(is);
        const auto w = read_pod<std::int32_t>(is);
        Tensor t(n, c, h, w);
        is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
        if (!is) throw IoError("checkpoint: truncated tensor data");
        ck.tensors.push_back(std::move(t));
    }
    return ck;
}

void restore_tensors(const std::vector<Tensor>& src, const std::vector<Tensor*>& dst) {
    if (src.size() != dst.size()) {
        throw IoError("checkpoint: tensor count " + std::to_string(src.size()) + " does not match model (" +
                      std::to_string(dst.size()) + ")");
    }
    for (std::size_t i = 0; i < src.size(); ++i) {
        if (!src[i].same_shape(*dst[i])) {
            throw IoError("checkpoint: tensor " + std::to_string(i) + " shape " + src[i].shape_str() +
                          " does not match model " + dst[i]->shape_str());
        }
        *dst[i] = src[i];
    }
}

}  // namespace gsyn::nn
