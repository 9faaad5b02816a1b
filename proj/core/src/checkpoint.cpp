#include "acdit/checkpoint.hpp"

#include <cstring>

#include "binio.hpp"

namespace acdit {

namespace {

constexpr char kMagic[4] = {'A', 'C', 'D', 'T'};
constexpr uint32_t kVersion = 1;

void put_array_set(std::vector<uint8_t>& b, const std::vector<NamedArray>& arrays) {
    binio::put_u32(b, static_cast<uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        binio::put_u16(b, static_cast<uint16_t>(a.name.size()));
        binio::put_bytes(b, a.name.data(), a.name.size());
        binio::put_u8(b, 0);  // dtype f32
        binio::put_u8(b, static_cast<uint8_t>(a.shape.size()));
        for (int64_t e : a.shape) binio::put_u32(b, static_cast<uint32_t>(e));
        binio::put_bytes(b, a.values.data(), a.values.size() * sizeof(float));
    }
}

std::vector<NamedArray> read_array_set(binio::Reader& r, const char* what) {
    const uint32_t count = r.u32(what);
    std::vector<NamedArray> arrays(count);
    for (auto& a : arrays) {
        const uint16_t name_len = r.u16("array name length");
        a.name.resize(name_len);
        r.bytes(a.name.data(), name_len, "array name");
        const uint8_t dtype = r.u8("dtype tag");
        if (dtype != 0) {
            throw IoError(r.path + ": unsupported dtype tag " + std::to_string(dtype) + " for " +
                          a.name);
        }
        const uint8_t rank = r.u8("rank");
        a.shape.resize(rank);
        int64_t numel = 1;
        for (auto& e : a.shape) {
            e = r.u32("extent");
            numel *= e;
        }
        a.values.resize(static_cast<size_t>(numel));
        r.bytes(a.values.data(), a.values.size() * sizeof(float), a.name.c_str());
    }
    return arrays;
}

std::vector<NamedArray> arrays_from_values(const Model& model,
                                           const std::vector<std::vector<float>>& values) {
    const auto& params = model.params();
    std::vector<NamedArray> out(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        out[i].name = params[i].first;
        out[i].shape = params[i].second.shape();
        out[i].values = values[i];
    }
    return out;
}

}  // namespace

void save_checkpoint(const std::string& path, const Trainer& trainer,
                     const std::string& config_text) {
    std::vector<uint8_t> b;
    b.insert(b.end(), kMagic, kMagic + 4);
    binio::put_u32(b, kVersion);
    binio::put_u64(b, static_cast<uint64_t>(trainer.step()));
    binio::put_u32(b, static_cast<uint32_t>(config_text.size()));
    binio::put_bytes(b, config_text.data(), config_text.size());

    const auto& params = trainer.model().params();
    std::vector<NamedArray> pa(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        pa[i].name = params[i].first;
        pa[i].shape = params[i].second.shape();
        pa[i].values.assign(params[i].second.data().begin(), params[i].second.data().end());
    }
    put_array_set(b, pa);
    put_array_set(b, arrays_from_values(trainer.model(), trainer.ema()));
    put_array_set(b, arrays_from_values(trainer.model(), trainer.adam_m()));
    put_array_set(b, arrays_from_values(trainer.model(), trainer.adam_v()));

    const Rng::State rs = trainer.rng_state();
    for (uint64_t s : rs.s) binio::put_u64(b, s);
    binio::put_u8(b, rs.has_spare);
    binio::put_f64(b, rs.spare);

    binio::write_file_atomic(path, b);
}

CheckpointData load_checkpoint(const std::string& path) {
    const auto buf = binio::read_file(path);
    binio::Reader r{buf, 0, path};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), kMagic, 4) != 0) {
        throw IoError(path + ": bad magic, not a checkpoint");
    }
    r.pos = 4;
    const uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));
    }
    CheckpointData c;
    c.step = r.u64("step");
    const uint32_t cfg_len = r.u32("config length");
    c.config_text.resize(cfg_len);
    r.bytes(c.config_text.data(), cfg_len, "config text");
    c.params = read_array_set(r, "parameter count");
    c.ema = read_array_set(r, "ema count");
    c.adam_m = read_array_set(r, "adam m count");
    c.adam_v = read_array_set(r, "adam v count");
    for (auto& s : c.rng.s) s = r.u64("rng state");
    c.rng.has_spare = r.u8("rng spare flag");
    c.rng.spare = r.f64("rng spare value");
    if (r.pos != buf.size()) {
        throw IoError(path + ": " + std::to_string(buf.size() - r.pos) + " trailing bytes");
    }
    return c;
}

void restore_trainer(Trainer& trainer, const CheckpointData& ckpt) {
    const auto& params = trainer.model().params();
    auto unpack = [&](const std::vector<NamedArray>& arrays, const char* what) {
        if (arrays.size() != params.size()) {
            throw Error(std::string("checkpoint: ") + what + " has " +
                        std::to_string(arrays.size()) + " arrays, model has " +
                        std::to_string(params.size()));
        }
        std::vector<std::vector<float>> values(arrays.size());
        for (size_t i = 0; i < arrays.size(); ++i) {
            if (arrays[i].name != params[i].first) {
                throw Error(std::string("checkpoint: ") + what + " array '" + arrays[i].name +
                            "' does not match parameter '" + params[i].first + "'");
            }
            values[i] = arrays[i].values;
        }
        return values;
    };
    trainer.restore(static_cast<int64_t>(ckpt.step), unpack(ckpt.params, "params"),
                    unpack(ckpt.ema, "ema"), unpack(ckpt.adam_m, "adam_m"),
                    unpack(ckpt.adam_v, "adam_v"), ckpt.rng);
}

}  // namespace acdit
