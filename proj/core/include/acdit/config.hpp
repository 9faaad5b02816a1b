#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "acdit/dataset.hpp"
#include "acdit/engine.hpp"
#include "acdit/model.hpp"
#include "acdit/schedule.hpp"

namespace acdit {

// The whole run description, serializable to a sectioned key=value text
// format. parse(emit(c)) reproduces every field bit-exactly.
struct RunConfig {
    // [layout]
    std::vector<int64_t> grid = {16, 16};
    std::vector<int64_t> block = {8, 8};
    // [model]
    int64_t layers = 2;
    int64_t hidden = 32;
    int64_t heads = 2;
    int64_t mlp = 128;
    int64_t channels = 1;
    int64_t timesteps = 1000;
    int64_t labels = 4;
    float label_drop = 0.1f;
    bool shared_t = false;
    uint64_t model_seed = 0;
    // [schedule]
    double beta_min = 1e-4;
    double beta_max = 2e-2;
    // [train]
    int64_t steps = 500;
    int64_t batch = 32;
    int64_t warmup = 50;
    double peak_lr = 3e-4;
    double floor_lr = 0.0;
    double decay_fraction = 0.15;
    double weight_decay = 0.0;
    double ema_decay = 0.9999;
    uint64_t seed = 42;
    int64_t checkpoint_every = 0;  // 0 = final checkpoint only
    std::string out_dir = "run";
    // [sampler]
    int64_t sampler_steps = 25;
    std::string sampler_mode = "deterministic";  // or "ancestral"
    double guidance = 1.5;
    // [data]
    std::string data_kind = "blobs";  // blobs | gradients | video | container
    int64_t data_classes = 4;
    uint64_t data_seed = 7;
    int64_t data_count = 4096;
    std::string data_path;  // container file for data_kind=container
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);
std::string emit_run_config(const RunConfig& c);

ModelConfig make_model_config(const RunConfig& c);
TrainerConfig make_trainer_config(const RunConfig& c);
NoiseSchedule make_noise_schedule(const RunConfig& c);
SamplerConfig make_sampler_config(const RunConfig& c);
std::unique_ptr<Dataset> make_dataset(const RunConfig& c);

}  // namespace acdit
