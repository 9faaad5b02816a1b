#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "acdit/dataset.hpp"
#include "acdit/model.hpp"
#include "acdit/schedule.hpp"

namespace acdit {

// Warmup-steady-decay learning rate: linear rise over `warmup`, flat at
// `peak` until (1 - decay_fraction) * total, then linear to `floor`.
struct WsdSchedule {
    int64_t warmup = 0;
    int64_t total = 0;
    double decay_fraction = 0.15;
    double peak = 3e-4;
    double floor = 0.0;
};

double wsd_lr(int64_t step, const WsdSchedule& sched);

struct TrainerConfig {
    int64_t steps = 500;
    int64_t batch = 32;
    WsdSchedule lr;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;
    double ema_decay = 0.9999;
    uint64_t seed = 0;
};

// Owns the model parameters, AdamW moments, EMA shadow and the RNG stream;
// one trainer per model instance, steps strictly serialized.
class Trainer {
   public:
    Trainer(ModelConfig mc, TrainerConfig tc, NoiseSchedule ns);

    // One optimization step on a batch drawn from the dataset. Returns the
    // training loss; throws NumericError on a non-finite loss.
    float train_step(const Dataset& ds);

    int64_t step() const { return step_; }
    double last_lr() const { return last_lr_; }
    const Model& model() const { return model_; }
    const TrainerConfig& trainer_config() const { return tc_; }
    const NoiseSchedule& noise_schedule() const { return ns_; }
    const ScamMask& scam() const { return scam_; }

    // Fresh model carrying the EMA weights.
    Model ema_model() const;

    // Checkpoint plumbing: everything needed to resume bit-identically.
    const std::vector<std::vector<float>>& ema() const { return ema_; }
    const std::vector<std::vector<float>>& adam_m() const { return adam_m_; }
    const std::vector<std::vector<float>>& adam_v() const { return adam_v_; }
    Rng::State rng_state() const { return rng_.state(); }
    void restore(int64_t step, const std::vector<std::vector<float>>& params,
                 const std::vector<std::vector<float>>& ema,
                 const std::vector<std::vector<float>>& adam_m,
                 const std::vector<std::vector<float>>& adam_v, const Rng::State& rng);

   private:
    ModelConfig mc_;
    TrainerConfig tc_;
    NoiseSchedule ns_;
    Model model_;
    ScamMask scam_;
    std::vector<std::vector<float>> ema_, adam_m_, adam_v_;
    Rng rng_;
    int64_t step_ = 0;
    double last_lr_ = 0.0;
};

// Blockwise autoregressive sampling: each block starts from Gaussian noise,
// runs the reverse subsequence with the model's block predictions (two passes
// combined by guided_eps when guidance != 1), then joins the clean context.
// With use_kv_cache=false every denoise step recomputes the full training
// forward instead; both paths draw identical noise. Returns
// (labels.size(), grid..., ch) values.
std::vector<float> sample_grids(const Model& model, const NoiseSchedule& ns,
                                const SamplerConfig& sc, const std::vector<int64_t>& labels,
                                Rng& rng, bool use_kv_cache = true);

// Per-step CSV metrics: "step,lr,loss,wall_ms" with a header row.
class MetricsLogger {
   public:
    explicit MetricsLogger(const std::string& path);
    void log(int64_t step, double lr, double loss, double wall_ms);
    void flush();

   private:
    std::ofstream out_;
};

}  // namespace acdit
