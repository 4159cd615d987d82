#pragma once

#include <filesystem>

#include "mmsn/image.hpp"

namespace mmsn {

/// 8-bit grayscale PNG. Intensities are quantized with round(v * 255).
void write_png_gray8(const std::filesystem::path& path, const Image& img);

/// Reads an 8-bit grayscale PNG back into [0, 1] intensities. Non-gray or
/// 16-bit inputs are converted.
Image read_png_gray8(const std::filesystem::path& path);

}  // namespace mmsn
