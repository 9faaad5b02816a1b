#pragma once

// Internal little-endian byte buffer helpers shared by the binary file
// formats (checkpoints, latent containers). Not installed.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "acdit/errors.hpp"

namespace acdit::binio {

inline void put_u8(std::vector<uint8_t>& b, uint8_t v) { b.push_back(v); }

inline void put_u16(std::vector<uint8_t>& b, uint16_t v) {
    for (int i = 0; i < 2; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u32(std::vector<uint8_t>& b, uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::vector<uint8_t>& b, uint64_t v) {
    for (int i = 0; i < 8; ++i) b.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::vector<uint8_t>& b, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(b, bits);
}

inline void put_f64(std::vector<uint8_t>& b, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_u64(b, bits);
}

inline void put_bytes(std::vector<uint8_t>& b, const void* p, size_t n) {
    const size_t off = b.size();
    b.resize(off + n);
    std::memcpy(b.data() + off, p, n);
}

struct Reader {
    const std::vector<uint8_t>& buf;
    size_t pos = 0;
    std::string path;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size()) {
            throw IoError(path + ": truncated reading " + what + " (need byte " +
                          std::to_string(pos + n) + ", file has " + std::to_string(buf.size()) + ")");
        }
    }
    uint8_t u8(const char* what) {
        need(1, what);
        return buf[pos++];
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i) v = static_cast<uint16_t>(v | (buf[pos + static_cast<size_t>(i)] << (8 * i)));
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf[pos + static_cast<size_t>(i)]) << (8 * i);
        pos += 8;
        return v;
    }
    float f32(const char* what) {
        const uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64(const char* what) {
        const uint64_t bits = u64(what);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    void bytes(void* out, size_t n, const char* what) {
        need(n, what);
        std::memcpy(out, buf.data() + pos, n);
        pos += n;
    }
};

inline std::vector<uint8_t> read_file(const std::string& path) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError(path + ": cannot open for reading");
    std::fseek(f, 0, SEEK_END);
    const long sz = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<uint8_t> buf(static_cast<size_t>(sz));
    if (sz > 0 && std::fread(buf.data(), 1, buf.size(), f) != buf.size()) {
        std::fclose(f);
        throw IoError(path + ": short read");
    }
    std::fclose(f);
    return buf;
}

// Write-temp-then-rename so partially written files never replace good ones.
inline void write_file_atomic(const std::string& path, const std::vector<uint8_t>& bytes) {
    const std::string tmp = path + ".tmp";
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw IoError(tmp + ": cannot open for writing");
    if (!bytes.empty() && std::fwrite(bytes.data(), 1, bytes.size(), f) != bytes.size()) {
        std::fclose(f);
        throw IoError(tmp + ": short write");
    }
    std::fclose(f);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError(path + ": rename failed: " + ec.message());
}

}  // namespace acdit::binio
