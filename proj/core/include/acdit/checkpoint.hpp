#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "acdit/engine.hpp"
#include "acdit/tensor.hpp"

namespace acdit {

// Binary checkpoint: magic "ACDT", version, step counter, embedded config
// text, then four parallel named-array sets (params, EMA, AdamW first/second
// moments) and the RNG state. Little-endian, float32 payloads; load(save(x))
// is bit-exact and resuming reproduces the uninterrupted run.
struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct CheckpointData {
    uint64_t step = 0;
    std::string config_text;
    std::vector<NamedArray> params;
    std::vector<NamedArray> ema;
    std::vector<NamedArray> adam_m;
    std::vector<NamedArray> adam_v;
    Rng::State rng{};
};

void save_checkpoint(const std::string& path, const Trainer& trainer,
                     const std::string& config_text);
CheckpointData load_checkpoint(const std::string& path);

// Restores a trainer built from the same config to the checkpointed state.
void restore_trainer(Trainer& trainer, const CheckpointData& ckpt);

}  // namespace acdit
