#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "glandsynth/grid.hpp"

namespace gsyn {

using Gray8 = Grid2<std::uint8_t>;

/// 8-bit single-channel PNG encode/decode. Decoding converts palette, RGB and 16-bit
/// inputs to 8-bit gray. Throws IoError on malformed data.
std::string encode_png(const Gray8& image);
Gray8 decode_png(const std::string& bytes);

void write_png(const std::filesystem::path& path, const Gray8& image);
Gray8 read_png(const std::filesystem::path& path);

/// Binary mask -> 0/255, and back (any nonzero pixel is foreground).
Gray8 mask_to_gray(const Mask& mask);
Mask gray_to_mask(const Gray8& gray);

/// [0,1] image -> round(255 v) with clamping, and back (v / 255).
Gray8 image_to_gray(const Image& image);
Image gray_to_image(const Gray8& gray);

}  // namespace gsyn
