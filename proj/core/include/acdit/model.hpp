#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "acdit/layout.hpp"
#include "acdit/rng.hpp"
#include "acdit/rope.hpp"
#include "acdit/tensor.hpp"

namespace acdit {

struct ModelConfig {
    int64_t layers = 2;
    int64_t hidden = 32;  // h
    int64_t heads = 2;
    int64_t mlp_dim = 128;
    int64_t channels = 1;      // per-token channels
    int64_t timesteps = 1000;  // T
    int64_t num_labels = 4;
    float label_drop_prob = 0.1f;
    // One shared diffusion timestep per sample instead of one per block.
    bool shared_timestep = false;
    uint64_t init_seed = 0;
    BlockLayout layout;
    RopeNdConfig rope;

    int64_t head_dim() const { return hidden / heads; }
    int64_t null_label() const { return num_labels; }
    void validate() const;
};

// Per-layer keys/values of committed clean blocks, laid out (batch, tokens,
// heads, head_dim) with tokens growing by one block per commit. Keys are
// stored post-norm and post-rotation, exactly as attention consumes them.
struct KvCache {
    int64_t batch = 0;
    int64_t heads = 0;
    int64_t head_dim = 0;
    int64_t block_size = 0;
    int64_t committed = 0;
    struct LayerKv {
        std::vector<float> k, v;
    };
    std::vector<LayerKv> layers;

    int64_t cached_tokens() const { return committed * block_size; }
    void validate() const;
};

// Per-head RMS normalization of queries and keys with learned scales,
// applied before rotation and the attention dot product.
std::pair<Tensor, Tensor> qk_norm(const Tensor& q, const Tensor& k, const Tensor& q_weight,
                                  const Tensor& k_weight, int64_t heads, float eps);

class Model {
   public:
    explicit Model(ModelConfig cfg);

    const ModelConfig& config() const { return cfg_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    Tensor param(const std::string& name) const;
    void set_param(const std::string& name, const std::vector<float>& values);
    int64_t param_count() const;

    // Clean keys/values captured from a training pass for cache oracles:
    // per layer, (batch, L, heads, head_dim) in block order.
    struct CleanKvDebug {
        std::vector<std::vector<float>> k, v;
    };

    // clean/noise blocks: (batch, N, B, ch) or (N, B, ch); t_per_block is
    // flattened (batch * N) with values in [1, T]; labels per sample in
    // [0, num_labels] (num_labels = null). Returns noise predictions of the
    // same block shape; clean positions never reach the output head.
    Tensor forward_train(const Tensor& clean_blocks, const Tensor& noise_blocks,
                         const std::vector<int64_t>& t_per_block,
                         const std::vector<int64_t>& labels, const ScamMask& mask,
                         CleanKvDebug* debug_kv = nullptr) const;

    // Denoising pass for block i given exactly i committed clean blocks.
    // noise_block: (batch, B, ch); one timestep shared across the batch.
    Tensor forward_block_infer(const Tensor& noise_block, int64_t t,
                               const std::vector<int64_t>& labels, const KvCache& cache,
                               int64_t block_index) const;

    // Runs the clean path for block i over the cached context and appends its
    // per-layer keys/values. Noise activations are never stored.
    void commit_clean_block(const Tensor& clean_block, KvCache& cache, int64_t block_index) const;

    KvCache make_cache(int64_t batch) const;

   private:
    struct LayerParams {
        Tensor attn_norm_w;
        Tensor wq, bq, wk, bk, wv, bv, wo, bo;
        Tensor q_norm_w, k_norm_w;
        Tensor mlp_norm_w;
        Tensor w1, b1, w2, b2;
        Tensor adaln_w, adaln_b;
    };

    Tensor add_param(const std::string& name, Shape shape, std::vector<float> data);
    Tensor condition_vector(const std::vector<int64_t>& t_flat,
                            const std::vector<int64_t>& labels_per_entry) const;
    Tensor mlp_block(const Tensor& x, const LayerParams& lp) const;

    ModelConfig cfg_;
    std::vector<std::pair<std::string, Tensor>> params_;
    Tensor patchify_w_, patchify_b_;
    Tensor t_w1_, t_b1_, t_w2_, t_b2_;
    Tensor label_table_;
    std::vector<LayerParams> layers_;
    Tensor final_adaln_w_, final_adaln_b_;
    Tensor head_w_, head_b_;

    RopeTable train_table_;                // 2L rows (clean then noise, same coords)
    std::vector<RopeTable> block_tables_;  // per block: B rows
};

// Standard sinusoidal embedding of (integer) timesteps, dimension must be even.
std::vector<float> sinusoidal_embedding(const std::vector<int64_t>& t, int64_t dim);

}  // namespace acdit
