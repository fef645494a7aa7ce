#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dope::io {

/// Minimal PNG support: 8-bit grayscale and 8-bit RGB, no interlacing.
/// The encoder emits stored (uncompressed) zlib blocks, which every PNG
/// reader accepts; the decoder handles the same subset.
struct PngImage {
    int width = 0;
    int height = 0;
    int channels = 0; // 1 = gray, 3 = rgb
    std::vector<std::uint8_t> pixels; // row-major, interleaved
};

void write_png(const std::string& path, const PngImage& img);
PngImage read_png(const std::string& path);

} // namespace dope::io
