#include "acdit/engine.hpp"

#include <cmath>
#include <cstring>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace acdit {

namespace {

// Activation tensors are multi-megabyte and churn once per op; glibc would
// serve each from a fresh mmap (page faults + kernel zeroing). Keeping them
// on the regular heap roughly halves the step time.
void tune_allocator() {
#if defined(__GLIBC__)
    static const bool done = [] {
        mallopt(M_MMAP_THRESHOLD, 1 << 30);
        mallopt(M_TRIM_THRESHOLD, 1 << 30);
        return true;
    }();
    (void)done;
#endif
}

}  // namespace

double wsd_lr(int64_t step, const WsdSchedule& sched) {
    if (step < 0 || step > sched.total) {
        throw ShapeError("wsd_lr: step " + std::to_string(step) + " outside [0," +
                         std::to_string(sched.total) + "]");
    }
    if (sched.warmup > 0 && step < sched.warmup) {
        return sched.peak * static_cast<double>(step) / static_cast<double>(sched.warmup);
    }
    const double decay_start = static_cast<double>(sched.total) * (1.0 - sched.decay_fraction);
    if (static_cast<double>(step) <= decay_start || sched.decay_fraction <= 0.0) {
        return sched.peak;
    }
    if (step == sched.total) return sched.floor;
    const double progress =
        (static_cast<double>(step) - decay_start) / (static_cast<double>(sched.total) - decay_start);
    return sched.peak + (sched.floor - sched.peak) * progress;
}

Trainer::Trainer(ModelConfig mc, TrainerConfig tc, NoiseSchedule ns)
    : mc_(std::move(mc)), tc_(tc), ns_(std::move(ns)), model_(mc_), scam_(build_scam(mc_.layout)),
      rng_(tc.seed) {
    tune_allocator();
    if (tc_.lr.total == 0) tc_.lr.total = tc_.steps;
    for (const auto& [name, p] : model_.params()) {
        ema_.emplace_back(p.data().begin(), p.data().end());
        adam_m_.emplace_back(p.size(), 0.0f);
        adam_v_.emplace_back(p.size(), 0.0f);
    }
}

float Trainer::train_step(const Dataset& ds) {
    const int64_t N = mc_.layout.num_blocks;
    const int64_t B = mc_.layout.block_size;
    const int64_t L = mc_.layout.seq_len;
    const int64_t ch = mc_.channels;
    const int64_t bt = tc_.batch;
    if (ds.sample_numel() != L * ch) {
        throw ShapeError("train_step: dataset sample size " + std::to_string(ds.sample_numel()) +
                         " does not match layout (" + std::to_string(L * ch) + ")");
    }

    // Draw the batch, per-sample label dropout, per-block timesteps and noise.
    std::vector<float> grids(static_cast<size_t>(bt * L * ch));
    std::vector<int64_t> labels(static_cast<size_t>(bt));
    std::vector<int64_t> t_per_block(static_cast<size_t>(bt * N));
    for (int64_t b = 0; b < bt; ++b) {
        const int64_t idx = rng_.uniform_int(ds.size());
        ds.fill(idx, {grids.data() + b * L * ch, static_cast<size_t>(L * ch)});
        int64_t lab = ds.label_of(idx);
        if (mc_.label_drop_prob > 0.0f && rng_.uniform() < mc_.label_drop_prob) {
            lab = mc_.null_label();
        }
        labels[static_cast<size_t>(b)] = lab;
        if (mc_.shared_timestep) {
            const int64_t t = 1 + rng_.uniform_int(ns_.steps);
            for (int64_t i = 0; i < N; ++i) t_per_block[static_cast<size_t>(b * N + i)] = t;
        } else {
            for (int64_t i = 0; i < N; ++i) {
                t_per_block[static_cast<size_t>(b * N + i)] = 1 + rng_.uniform_int(ns_.steps);
            }
        }
    }

    std::vector<float> clean(static_cast<size_t>(bt * L * ch));
    blockify_raw({grids.data(), grids.size()}, {clean.data(), clean.size()}, bt, ch, mc_.layout);

    std::vector<float> eps(static_cast<size_t>(bt * L * ch));
    for (auto& e : eps) e = static_cast<float>(rng_.normal());

    std::vector<float> noised(static_cast<size_t>(bt * L * ch));
    for (int64_t b = 0; b < bt; ++b) {
        for (int64_t i = 0; i < N; ++i) {
            const double ab = ns_.alpha_bar_at(t_per_block[static_cast<size_t>(b * N + i)]);
            const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
            const int64_t off = (b * N + i) * B * ch;
            for (int64_t j = 0; j < B * ch; ++j) {
                noised[static_cast<size_t>(off + j)] = static_cast<float>(
                    c0 * clean[static_cast<size_t>(off + j)] + c1 * eps[static_cast<size_t>(off + j)]);
            }
        }
    }

    Tensor clean_t = Tensor::from_data({bt, N, B, ch}, std::move(clean));
    Tensor noise_t = Tensor::from_data({bt, N, B, ch}, std::move(noised));
    Tensor eps_t = Tensor::from_data({bt, N, B, ch}, std::move(eps));

    Tensor pred = model_.forward_train(clean_t, noise_t, t_per_block, labels, scam_);
    Tensor loss = eps_loss(pred, eps_t);
    const float loss_v = loss.item();
    if (!std::isfinite(loss_v)) {
        throw NumericError("train_step: non-finite loss at step " + std::to_string(step_));
    }
    backward(loss);

    last_lr_ = wsd_lr(std::min(step_ + 1, tc_.lr.total), tc_.lr);
    const double t_adam = static_cast<double>(step_ + 1);
    const double bc1 = 1.0 - std::pow(tc_.adam_beta1, t_adam);
    const double bc2 = 1.0 - std::pow(tc_.adam_beta2, t_adam);
    const auto& params = model_.params();
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor p = params[pi].second;
        auto vals = p.mutable_data();
        auto g = p.grad();
        auto& m = adam_m_[pi];
        auto& v = adam_v_[pi];
        if (g.empty()) {
            // Parameter off the loss path this step; moments still decay.
            for (size_t j = 0; j < vals.size(); ++j) {
                m[j] = static_cast<float>(tc_.adam_beta1 * m[j]);
                v[j] = static_cast<float>(tc_.adam_beta2 * v[j]);
            }
        } else {
            for (size_t j = 0; j < vals.size(); ++j) {
                const double gj = g[j];
                const double mj = tc_.adam_beta1 * m[j] + (1.0 - tc_.adam_beta1) * gj;
                const double vj = tc_.adam_beta2 * v[j] + (1.0 - tc_.adam_beta2) * gj * gj;
                m[j] = static_cast<float>(mj);
                v[j] = static_cast<float>(vj);
                const double update = (mj / bc1) / (std::sqrt(vj / bc2) + tc_.adam_eps) +
                                      tc_.weight_decay * vals[j];
                vals[j] = static_cast<float>(vals[j] - last_lr_ * update);
            }
        }
        p.zero_grad();
        auto& e = ema_[pi];
        for (size_t j = 0; j < vals.size(); ++j) {
            e[j] = static_cast<float>(tc_.ema_decay * static_cast<double>(e[j]) +
                                      (1.0 - tc_.ema_decay) * static_cast<double>(vals[j]));
        }
    }
    step_ += 1;
    return loss_v;
}

Model Trainer::ema_model() const {
    Model m(mc_);
    const auto& params = model_.params();
    for (size_t pi = 0; pi < params.size(); ++pi) m.set_param(params[pi].first, ema_[pi]);
    return m;
}

void Trainer::restore(int64_t step, const std::vector<std::vector<float>>& params,
                      const std::vector<std::vector<float>>& ema,
                      const std::vector<std::vector<float>>& adam_m,
                      const std::vector<std::vector<float>>& adam_v, const Rng::State& rng) {
    const auto& mp = model_.params();
    if (params.size() != mp.size() || ema.size() != mp.size() || adam_m.size() != mp.size() ||
        adam_v.size() != mp.size()) {
        throw Error("trainer restore: parameter set arity mismatch");
    }
    for (size_t pi = 0; pi < mp.size(); ++pi) {
        model_.set_param(mp[pi].first, params[pi]);
        if (ema[pi].size() != params[pi].size() || adam_m[pi].size() != params[pi].size() ||
            adam_v[pi].size() != params[pi].size()) {
            throw Error("trainer restore: array size mismatch for " + mp[pi].first);
        }
        ema_[pi] = ema[pi];
        adam_m_[pi] = adam_m[pi];
        adam_v_[pi] = adam_v[pi];
    }
    step_ = step;
    rng_.set_state(rng);
}

namespace {

// Reference prediction path: zero-pad the unknown blocks and run the full
// training forward, then read off the rows of block i. Causality makes the
// padding invisible to the prediction.
std::vector<float> full_recompute_eps(const Model& model, const ScamMask& scam,
                                      const std::vector<float>& committed_blocks,
                                      const Tensor& x_block, int64_t t,
                                      const std::vector<int64_t>& labels, int64_t i) {
    const auto& cfg = model.config();
    const int64_t N = cfg.layout.num_blocks;
    const int64_t B = cfg.layout.block_size;
    const int64_t ch = cfg.channels;
    const int64_t bt = static_cast<int64_t>(labels.size());
    const int64_t per = B * ch;

    std::vector<float> clean(static_cast<size_t>(bt * N * per), 0.0f);
    for (int64_t b = 0; b < bt; ++b) {
        std::memcpy(clean.data() + b * N * per, committed_blocks.data() + b * N * per,
                    static_cast<size_t>(i * per) * sizeof(float));
    }
    std::vector<float> noise(static_cast<size_t>(bt * N * per), 0.0f);
    auto px = x_block.data();
    for (int64_t b = 0; b < bt; ++b) {
        std::memcpy(noise.data() + (b * N + i) * per, px.data() + b * per,
                    static_cast<size_t>(per) * sizeof(float));
    }
    std::vector<int64_t> t_vec(static_cast<size_t>(bt * N), 1);
    for (int64_t b = 0; b < bt; ++b) t_vec[static_cast<size_t>(b * N + i)] = t;

    NoGradGuard ng;
    Tensor pred = model.forward_train(Tensor::from_data({bt, N, B, ch}, std::move(clean)),
                                      Tensor::from_data({bt, N, B, ch}, std::move(noise)), t_vec,
                                      labels, scam);
    std::vector<float> out(static_cast<size_t>(bt * per));
    auto pp = pred.data();
    for (int64_t b = 0; b < bt; ++b) {
        std::memcpy(out.data() + b * per, pp.data() + (b * N + i) * per,
                    static_cast<size_t>(per) * sizeof(float));
    }
    return out;
}

}  // namespace

std::vector<float> sample_grids(const Model& model, const NoiseSchedule& ns,
                                const SamplerConfig& sc, const std::vector<int64_t>& labels,
                                Rng& rng, bool use_kv_cache) {
    tune_allocator();
    const auto& cfg = model.config();
    const int64_t N = cfg.layout.num_blocks;
    const int64_t B = cfg.layout.block_size;
    const int64_t L = cfg.layout.seq_len;
    const int64_t ch = cfg.channels;
    const int64_t bt = static_cast<int64_t>(labels.size());
    if (bt == 0) return {};
    for (int64_t lab : labels) {
        if (lab < 0 || lab > cfg.num_labels) {
            throw ShapeError("sample: label " + std::to_string(lab) + " out of range");
        }
    }
    const auto ts = step_subsequence(ns.steps, sc.steps);
    const std::vector<int64_t> null_labels(static_cast<size_t>(bt), cfg.null_label());
    const bool guided = sc.guidance_scale != 1.0;

    ScamMask scam;
    if (!use_kv_cache) scam = build_scam(cfg.layout);
    KvCache cache = model.make_cache(bt);

    // Committed clean blocks, (bt, N, B, ch); unset blocks stay zero.
    std::vector<float> blocks(static_cast<size_t>(bt * L * ch), 0.0f);
    const int64_t per = B * ch;

    for (int64_t i = 0; i < N; ++i) {
        std::vector<float> x0(static_cast<size_t>(bt * per));
        for (auto& v : x0) v = static_cast<float>(rng.normal());
        Tensor x = Tensor::from_data({bt, B, ch}, std::move(x0));

        for (size_t k = 0; k < ts.size(); ++k) {
            const int64_t t = ts[k];
            const int64_t t_prev = k + 1 < ts.size() ? ts[k + 1] : 0;
            Tensor eps_c, eps_u;
            if (use_kv_cache) {
                eps_c = model.forward_block_infer(x, t, labels, cache, i);
                if (guided) eps_u = model.forward_block_infer(x, t, null_labels, cache, i);
            } else {
                eps_c = Tensor::from_data({bt, B, ch},
                                          full_recompute_eps(model, scam, blocks, x, t, labels, i));
                if (guided) {
                    eps_u = Tensor::from_data(
                        {bt, B, ch}, full_recompute_eps(model, scam, blocks, x, t, null_labels, i));
                }
            }
            Tensor eps = guided ? guided_eps(eps_c, eps_u, sc.guidance_scale) : eps_c;
            x = reverse_step(x, eps, t, t_prev, sc.mode, rng, ns);
        }

        auto pc = x.data();
        for (int64_t b = 0; b < bt; ++b) {
            std::memcpy(blocks.data() + (b * N + i) * per, pc.data() + b * per,
                        static_cast<size_t>(per) * sizeof(float));
        }
        if (use_kv_cache) model.commit_clean_block(x, cache, i);
    }

    std::vector<float> grids(static_cast<size_t>(bt * L * ch));
    unblockify_raw({blocks.data(), blocks.size()}, {grids.data(), grids.size()}, bt, ch, cfg.layout);
    return grids;
}

MetricsLogger::MetricsLogger(const std::string& path) : out_(path) {
    if (!out_) throw IoError(path + ": cannot open metrics log");
    out_ << "step,lr,loss,wall_ms\n";
    out_.flush();
}

void MetricsLogger::log(int64_t step, double lr, double loss, double wall_ms) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld,%.9g,%.9g,%.3f\n", static_cast<long long>(step), lr, loss,
                  wall_ms);
    out_ << buf;
}

void MetricsLogger::flush() { out_.flush(); }

}  // namespace acdit
