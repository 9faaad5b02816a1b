#include "acdit/ppm.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>

#include "acdit/errors.hpp"

namespace acdit {

void write_ppm(const std::string& path, int64_t height, int64_t width, int64_t channels,
               std::span<const float> values) {
    if (channels != 1 && channels != 3) {
        throw ShapeError("write_ppm: channels must be 1 or 3");
    }
    if (static_cast<int64_t>(values.size()) != height * width * channels) {
        throw ShapeError("write_ppm: value count does not match dimensions");
    }
    std::vector<uint8_t> rgb(static_cast<size_t>(height * width * 3));
    for (int64_t p = 0; p < height * width; ++p) {
        for (int64_t c = 0; c < 3; ++c) {
            const float v = values[static_cast<size_t>(channels == 1 ? p : p * 3 + c)];
            const float mapped = (std::clamp(v, -1.0f, 1.0f) + 1.0f) * 0.5f * 255.0f;
            rgb[static_cast<size_t>(p * 3 + c)] = static_cast<uint8_t>(mapped + 0.5f);
        }
    }
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw IoError(tmp + ": cannot open for writing");
    std::fprintf(f, "P6\n%lld %lld\n255\n", static_cast<long long>(width),
                 static_cast<long long>(height));
    if (std::fwrite(rgb.data(), 1, rgb.size(), f) != rgb.size()) {
        std::fclose(f);
        throw IoError(tmp + ": short write");
    }
    std::fclose(f);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError(path + ": rename failed: " + ec.message());
}

PpmImage read_ppm(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError(path + ": cannot open for reading");
    char magic[3] = {};
    long long w = 0, h = 0;
    int maxval = 0;
    if (std::fscanf(f, "%2s %lld %lld %d", magic, &w, &h, &maxval) != 4 ||
        std::string(magic) != "P6" || maxval != 255 || w <= 0 || h <= 0) {
        std::fclose(f);
        throw IoError(path + ": not a maxval-255 P6 file");
    }
    std::fgetc(f);  // single whitespace after header
    PpmImage img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<size_t>(w * h * 3));
    if (std::fread(img.rgb.data(), 1, img.rgb.size(), f) != img.rgb.size()) {
        std::fclose(f);
        throw IoError(path + ": truncated pixel data");
    }
    std::fclose(f);
    return img;
}

}  // namespace acdit
