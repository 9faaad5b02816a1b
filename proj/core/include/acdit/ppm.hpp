#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace acdit {

// Binary PPM (P6) export. Values in [-1, 1] map to [0, 255] with clamping;
// single-channel inputs are replicated to gray RGB.
void write_ppm(const std::string& path, int64_t height, int64_t width, int64_t channels,
               std::span<const float> values);

struct PpmImage {
    int64_t height = 0;
    int64_t width = 0;
    std::vector<uint8_t> rgb;  // height * width * 3
};

PpmImage read_ppm(const std::string& path);

}  // namespace acdit
