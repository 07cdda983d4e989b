#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pipebench/common.hpp"

namespace pipebench {

// 8-bit grayscale image, row-major from the top row.
struct Image {
    int h = 0;
    int w = 0;
    std::vector<uint8_t> px;

    Image() = default;
    Image(int h_, int w_, uint8_t fill = 255) : h(h_), w(w_), px(static_cast<size_t>(h_) * w_, fill) {}

    uint8_t& at(int row, int col) { return px[static_cast<size_t>(row) * w + col]; }
    uint8_t at(int row, int col) const { return px[static_cast<size_t>(row) * w + col]; }
};

// Binary PGM (P5), maxval 255.
void write_pgm(const Image& img, const std::string& path);
Image read_pgm(const std::string& path);

}  // namespace pipebench
