#include "acdit/model.hpp"

#include <cmath>
#include <cstring>

namespace acdit {

namespace {
constexpr float kNormEps = 1e-6f;

std::vector<float> trunc_normal(Rng& rng, int64_t n, double std_dev) {
    std::vector<float> out(static_cast<size_t>(n));
    for (auto& v : out) {
        double z;
        do {
            z = rng.normal();
        } while (std::abs(z) > 2.0);
        v = static_cast<float>(z * std_dev);
    }
    return out;
}

}  // namespace

void ModelConfig::validate() const {
    if (layers < 0 || hidden < 2 || heads < 1 || mlp_dim < 1 || channels < 1 || timesteps < 1 ||
        num_labels < 1) {
        throw ShapeError("model config: non-positive field");
    }
    if (hidden % heads != 0) throw ShapeError("model config: hidden not divisible by heads");
    if (head_dim() % 2 != 0) throw ShapeError("model config: head dim must be even");
    if (hidden % 2 != 0) throw ShapeError("model config: hidden must be even");
    if (layout.seq_len == 0) throw ShapeError("model config: layout missing");
    if (rope.head_dim() != head_dim()) {
        throw ShapeError("model config: rope segments sum to " + std::to_string(rope.head_dim()) +
                         ", head dim is " + std::to_string(head_dim()));
    }
}

void KvCache::validate() const {
    for (const auto& l : layers) {
        const size_t want = static_cast<size_t>(batch * cached_tokens() * heads * head_dim);
        if (l.k.size() != want || l.v.size() != want) {
            throw Error("kv cache: layer size violates the committed-block invariant");
        }
    }
}

std::vector<float> sinusoidal_embedding(const std::vector<int64_t>& t, int64_t dim) {
    if (dim % 2 != 0) throw ShapeError("sinusoidal_embedding: dim must be even");
    const int64_t half = dim / 2;
    std::vector<float> out(t.size() * static_cast<size_t>(dim));
    for (size_t r = 0; r < t.size(); ++r) {
        for (int64_t i = 0; i < half; ++i) {
            const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                         static_cast<double>(half));
            const double arg = static_cast<double>(t[r]) * freq;
            out[r * static_cast<size_t>(dim) + static_cast<size_t>(i)] =
                static_cast<float>(std::cos(arg));
            out[r * static_cast<size_t>(dim) + static_cast<size_t>(half + i)] =
                static_cast<float>(std::sin(arg));
        }
    }
    return out;
}

std::pair<Tensor, Tensor> qk_norm(const Tensor& q, const Tensor& k, const Tensor& q_weight,
                                  const Tensor& k_weight, int64_t heads, float eps) {
    return {head_rms_norm(q, q_weight, heads, eps), head_rms_norm(k, k_weight, heads, eps)};
}

Tensor Model::add_param(const std::string& name, Shape shape, std::vector<float> data) {
    Tensor p = Tensor::param(std::move(shape), std::move(data));
    params_.emplace_back(name, p);
    return p;
}

Model::Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.init_seed);
    const int64_t h = cfg_.hidden;
    const int64_t ch = cfg_.channels;
    const int64_t d = cfg_.head_dim();

    auto tn = [&](Shape s) {
        const int64_t n = shape_numel(s);
        return trunc_normal(rng, n, 0.02);
    };
    auto zeros = [](Shape s) { return std::vector<float>(static_cast<size_t>(shape_numel(s)), 0.0f); };
    auto ones = [](Shape s) { return std::vector<float>(static_cast<size_t>(shape_numel(s)), 1.0f); };

    patchify_w_ = add_param("patchify.w", {ch, h}, tn({ch, h}));
    patchify_b_ = add_param("patchify.b", {h}, zeros({h}));
    t_w1_ = add_param("t_embed.w1", {h, h}, tn({h, h}));
    t_b1_ = add_param("t_embed.b1", {h}, zeros({h}));
    t_w2_ = add_param("t_embed.w2", {h, h}, tn({h, h}));
    t_b2_ = add_param("t_embed.b2", {h}, zeros({h}));
    label_table_ = add_param("label_embed.table", {cfg_.num_labels + 1, h},
                             tn({cfg_.num_labels + 1, h}));

    layers_.resize(static_cast<size_t>(cfg_.layers));
    for (int64_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        auto& lp = layers_[static_cast<size_t>(l)];
        lp.attn_norm_w = add_param(p + "attn_norm.w", {h}, ones({h}));
        lp.wq = add_param(p + "attn.wq", {h, h}, tn({h, h}));
        lp.bq = add_param(p + "attn.bq", {h}, zeros({h}));
        lp.wk = add_param(p + "attn.wk", {h, h}, tn({h, h}));
        lp.bk = add_param(p + "attn.bk", {h}, zeros({h}));
        lp.wv = add_param(p + "attn.wv", {h, h}, tn({h, h}));
        lp.bv = add_param(p + "attn.bv", {h}, zeros({h}));
        lp.wo = add_param(p + "attn.wo", {h, h}, tn({h, h}));
        lp.bo = add_param(p + "attn.bo", {h}, zeros({h}));
        lp.q_norm_w = add_param(p + "attn.q_norm.w", {d}, ones({d}));
        lp.k_norm_w = add_param(p + "attn.k_norm.w", {d}, ones({d}));
        lp.mlp_norm_w = add_param(p + "mlp_norm.w", {h}, ones({h}));
        lp.w1 = add_param(p + "mlp.w1", {h, cfg_.mlp_dim}, tn({h, cfg_.mlp_dim}));
        lp.b1 = add_param(p + "mlp.b1", {cfg_.mlp_dim}, zeros({cfg_.mlp_dim}));
        lp.w2 = add_param(p + "mlp.w2", {cfg_.mlp_dim, h}, tn({cfg_.mlp_dim, h}));
        lp.b2 = add_param(p + "mlp.b2", {h}, zeros({h}));
        // adaLN-Zero: modulation projections start at zero so each gated
        // residual branch initially contributes nothing.
        lp.adaln_w = add_param(p + "adaln.w", {h, 6 * h}, zeros({h, 6 * h}));
        lp.adaln_b = add_param(p + "adaln.b", {6 * h}, zeros({6 * h}));
    }
    final_adaln_w_ = add_param("final.adaln.w", {h, 2 * h}, zeros({h, 2 * h}));
    final_adaln_b_ = add_param("final.adaln.b", {2 * h}, zeros({2 * h}));
    head_w_ = add_param("final.head.w", {h, ch}, zeros({h, ch}));
    head_b_ = add_param("final.head.b", {ch}, zeros({ch}));

    // Rotation tables: clean and noise tokens at the same grid position share
    // positional indices, so the 2L training table is the L-slot table twice.
    const int64_t L = cfg_.layout.seq_len;
    std::vector<std::vector<int64_t>> pos2l(static_cast<size_t>(2 * L));
    for (int64_t s = 0; s < L; ++s) {
        auto coords = cfg_.layout.slot_coords(s);
        pos2l[static_cast<size_t>(s)] = coords;
        pos2l[static_cast<size_t>(L + s)] = coords;
    }
    train_table_ = build_rope_table(cfg_.rope, pos2l);

    const int64_t B = cfg_.layout.block_size;
    block_tables_.resize(static_cast<size_t>(cfg_.layout.num_blocks));
    for (int64_t i = 0; i < cfg_.layout.num_blocks; ++i) {
        std::vector<std::vector<int64_t>> pos(static_cast<size_t>(B));
        for (int64_t o = 0; o < B; ++o) pos[static_cast<size_t>(o)] = cfg_.layout.slot_coords(i * B + o);
        block_tables_[static_cast<size_t>(i)] = build_rope_table(cfg_.rope, pos);
    }
}

Tensor Model::param(const std::string& name) const {
    for (const auto& [n, p] : params_) {
        if (n == name) return p;
    }
    throw Error("model: no parameter named " + name);
}

void Model::set_param(const std::string& name, const std::vector<float>& values) {
    for (auto& [n, p] : params_) {
        if (n != name) continue;
        auto dst = p.mutable_data();
        if (dst.size() != values.size()) {
            throw ShapeError("set_param: " + name + " expects " + std::to_string(dst.size()) +
                             " values, got " + std::to_string(values.size()));
        }
        std::memcpy(dst.data(), values.data(), values.size() * sizeof(float));
        return;
    }
    throw Error("model: no parameter named " + name);
}

int64_t Model::param_count() const {
    int64_t n = 0;
    for (const auto& [name, p] : params_) n += p.size();
    return n;
}

namespace {

// x * (1 + scale) + shift, all shapes equal.
Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scale) {
    return add(mul(x, add_scalar(scale, 1.0f)), shift);
}

}  // namespace

Tensor Model::condition_vector(const std::vector<int64_t>& t_flat,
                               const std::vector<int64_t>& labels_per_entry) const {
    // (entries, h) = MLP(sinusoidal(t)) + label embedding
    const int64_t n = static_cast<int64_t>(t_flat.size());
    for (int64_t t : t_flat) {
        if (t < 1 || t > cfg_.timesteps) {
            throw ShapeError("model: timestep " + std::to_string(t) + " outside [1," +
                             std::to_string(cfg_.timesteps) + "]");
        }
    }
    for (int64_t lab : labels_per_entry) {
        if (lab < 0 || lab > cfg_.num_labels) {
            throw ShapeError("model: label " + std::to_string(lab) + " outside [0," +
                             std::to_string(cfg_.num_labels) + "]");
        }
    }
    Tensor t_emb = Tensor::from_data({n, cfg_.hidden}, sinusoidal_embedding(t_flat, cfg_.hidden));
    Tensor t_vec = linear(silu(linear(t_emb, t_w1_, t_b1_)), t_w2_, t_b2_);
    Tensor lab = embedding_lookup(label_table_, labels_per_entry);
    return add(t_vec, lab);
}

Tensor Model::mlp_block(const Tensor& x, const LayerParams& lp) const {
    return linear(gelu(linear(x, lp.w1, lp.b1)), lp.w2, lp.b2);
}

Tensor Model::forward_train(const Tensor& clean_blocks, const Tensor& noise_blocks,
                            const std::vector<int64_t>& t_per_block,
                            const std::vector<int64_t>& labels, const ScamMask& mask,
                            CleanKvDebug* debug_kv) const {
    const int64_t N = cfg_.layout.num_blocks;
    const int64_t B = cfg_.layout.block_size;
    const int64_t L = cfg_.layout.seq_len;
    const int64_t ch = cfg_.channels;
    const int64_t h = cfg_.hidden;
    const int64_t H = cfg_.heads;
    const int64_t d = cfg_.head_dim();

    const bool batched = clean_blocks.rank() == 4;
    const int64_t bt = batched ? clean_blocks.dim(0) : 1;
    const Shape want = batched ? Shape{bt, N, B, ch} : Shape{N, B, ch};
    if (clean_blocks.shape() != want || noise_blocks.shape() != want) {
        throw ShapeError("forward_train: blocks must be " + shape_str(want) + ", got " +
                         shape_str(clean_blocks.shape()) + " and " + shape_str(noise_blocks.shape()));
    }
    if (static_cast<int64_t>(t_per_block.size()) != bt * N ||
        static_cast<int64_t>(labels.size()) != bt) {
        throw ShapeError("forward_train: need batch*N timesteps and batch labels");
    }
    if (mask.seq_len != L || mask.num_blocks != N || mask.block_size != B) {
        throw ShapeError("forward_train: mask does not match layout");
    }

    // Assemble the 2L input sequence (clean tokens then noise tokens).
    std::vector<float> seq(static_cast<size_t>(bt * 2 * L * ch));
    {
        auto pc = clean_blocks.data();
        auto pn = noise_blocks.data();
        const int64_t per = L * ch;
        for (int64_t b = 0; b < bt; ++b) {
            std::memcpy(seq.data() + b * 2 * per, pc.data() + b * per,
                        static_cast<size_t>(per) * sizeof(float));
            std::memcpy(seq.data() + b * 2 * per + per, pn.data() + b * per,
                        static_cast<size_t>(per) * sizeof(float));
        }
    }
    Tensor x = linear(Tensor::from_data({bt, 2 * L, ch}, std::move(seq)), patchify_w_, patchify_b_);

    // Per-(sample, block) conditioning; one label per sample replicated over N.
    std::vector<int64_t> labels_per_block(static_cast<size_t>(bt * N));
    for (int64_t b = 0; b < bt; ++b)
        for (int64_t i = 0; i < N; ++i) labels_per_block[static_cast<size_t>(b * N + i)] = labels[static_cast<size_t>(b)];
    Tensor cond = silu(condition_vector(t_per_block, labels_per_block));  // (bt*N, h)

    const float att_scale = 1.0f / std::sqrt(static_cast<float>(d));
    if (debug_kv) {
        debug_kv->k.assign(static_cast<size_t>(cfg_.layers), {});
        debug_kv->v.assign(static_cast<size_t>(cfg_.layers), {});
    }

    for (int64_t l = 0; l < cfg_.layers; ++l) {
        const auto& lp = layers_[static_cast<size_t>(l)];
        // Modulation vectors per noise token; clean tokens run unmodulated.
        Tensor mod = linear(cond, lp.adaln_w, lp.adaln_b);                       // (bt*N, 6h)
        mod = repeat_interleave(reshape(mod, {bt, N, 6 * h}), 1, B);             // (bt, L, 6h)
        Tensor shift1 = slice_axis(mod, 2, 0, h);
        Tensor scale1 = slice_axis(mod, 2, h, 2 * h);
        Tensor gate1 = slice_axis(mod, 2, 2 * h, 3 * h);
        Tensor shift2 = slice_axis(mod, 2, 3 * h, 4 * h);
        Tensor scale2 = slice_axis(mod, 2, 4 * h, 5 * h);
        Tensor gate2 = slice_axis(mod, 2, 5 * h, 6 * h);

        Tensor xc = slice_axis(x, 1, 0, L);
        Tensor xn = slice_axis(x, 1, L, 2 * L);

        Tensor yc = rms_norm(xc, lp.attn_norm_w, kNormEps);
        Tensor yn = modulate(rms_norm(xn, lp.attn_norm_w, kNormEps), shift1, scale1);
        Tensor y = concat_axis(yc, yn, 1);  // (bt, 2L, h)

        Tensor q = linear(y, lp.wq, lp.bq);
        Tensor k = linear(y, lp.wk, lp.bk);
        Tensor v = linear(y, lp.wv, lp.bv);
        auto [qn_, kn_] = qk_norm(q, k, lp.q_norm_w, lp.k_norm_w, H, kNormEps);
        Tensor qh = apply_rope_nd(reshape(qn_, {bt, 2 * L, H, d}), train_table_);
        Tensor kh = apply_rope_nd(reshape(kn_, {bt, 2 * L, H, d}), train_table_);
        Tensor vh = reshape(v, {bt, 2 * L, H, d});

        if (debug_kv) {
            // Clean rows only, copied out of the tape.
            auto& dk = debug_kv->k[static_cast<size_t>(l)];
            auto& dv = debug_kv->v[static_cast<size_t>(l)];
            dk.resize(static_cast<size_t>(bt * L * H * d));
            dv.resize(static_cast<size_t>(bt * L * H * d));
            auto pk = kh.data();
            auto pv = vh.data();
            for (int64_t b = 0; b < bt; ++b) {
                std::memcpy(dk.data() + b * L * H * d, pk.data() + b * 2 * L * H * d,
                            static_cast<size_t>(L * H * d) * sizeof(float));
                std::memcpy(dv.data() + b * L * H * d, pv.data() + b * 2 * L * H * d,
                            static_cast<size_t>(L * H * d) * sizeof(float));
            }
        }

        Tensor att = masked_softmax_attention(qh, kh, vh, mask.m, att_scale);  // (bt, 2L, h)
        att = linear(att, lp.wo, lp.bo);
        Tensor att_c = slice_axis(att, 1, 0, L);
        Tensor att_n = slice_axis(att, 1, L, 2 * L);
        Tensor x1c = add(xc, att_c);
        Tensor x1n = add(xn, mul(gate1, att_n));

        Tensor m2c = mlp_block(rms_norm(x1c, lp.mlp_norm_w, kNormEps), lp);
        Tensor m2n = mlp_block(modulate(rms_norm(x1n, lp.mlp_norm_w, kNormEps), shift2, scale2), lp);
        Tensor x2c = add(x1c, m2c);
        Tensor x2n = add(x1n, mul(gate2, m2n));
        x = concat_axis(x2c, x2n, 1);
    }

    // Output head over the noise half only.
    Tensor xn_final = slice_axis(x, 1, L, 2 * L);
    Tensor yf = rms_norm(xn_final, Tensor(), kNormEps);
    Tensor fmod = linear(cond, final_adaln_w_, final_adaln_b_);        // (bt*N, 2h)
    fmod = repeat_interleave(reshape(fmod, {bt, N, 2 * h}), 1, B);     // (bt, L, 2h)
    Tensor fshift = slice_axis(fmod, 2, 0, h);
    Tensor fscale = slice_axis(fmod, 2, h, 2 * h);
    Tensor pred = linear(modulate(yf, fshift, fscale), head_w_, head_b_);  // (bt, L, ch)
    return reshape(pred, batched ? Shape{bt, N, B, ch} : Shape{N, B, ch});
}

Tensor Model::forward_block_infer(const Tensor& noise_block, int64_t t,
                                  const std::vector<int64_t>& labels, const KvCache& cache,
                                  int64_t block_index) const {
    NoGradGuard ng;
    const int64_t B = cfg_.layout.block_size;
    const int64_t ch = cfg_.channels;
    const int64_t h = cfg_.hidden;
    const int64_t H = cfg_.heads;
    const int64_t d = cfg_.head_dim();

    const bool batched = noise_block.rank() == 3;
    const int64_t bt = batched ? noise_block.dim(0) : 1;
    const Shape want = batched ? Shape{bt, B, ch} : Shape{B, ch};
    if (noise_block.shape() != want) {
        throw ShapeError("forward_block_infer: block must be " + shape_str(want));
    }
    if (block_index < 0 || block_index >= cfg_.layout.num_blocks) {
        throw ShapeError("forward_block_infer: block index out of range");
    }
    if (cache.committed != block_index) {
        throw Error("forward_block_infer: cache holds " + std::to_string(cache.committed) +
                    " blocks, expected " + std::to_string(block_index));
    }
    if (cache.batch != bt) throw ShapeError("forward_block_infer: cache batch mismatch");
    if (static_cast<int64_t>(labels.size()) != bt) {
        throw ShapeError("forward_block_infer: need one label per sample");
    }
    cache.validate();

    Tensor cond = silu(condition_vector(std::vector<int64_t>(static_cast<size_t>(bt), t), labels));
    Tensor x = linear(batched ? noise_block : reshape(noise_block, {1, B, ch}), patchify_w_,
                      patchify_b_);  // (bt, B, h)

    const BoolMatrix imask = inference_mask(block_index, cfg_.layout);
    const RopeTable& tbl = block_tables_[static_cast<size_t>(block_index)];
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(d));
    const int64_t cached = cache.cached_tokens();

    for (int64_t l = 0; l < cfg_.layers; ++l) {
        const auto& lp = layers_[static_cast<size_t>(l)];
        Tensor mod = linear(cond, lp.adaln_w, lp.adaln_b);             // (bt, 6h)
        mod = repeat_interleave(reshape(mod, {bt, 1, 6 * h}), 1, B);   // (bt, B, 6h)
        Tensor shift1 = slice_axis(mod, 2, 0, h);
        Tensor scale1 = slice_axis(mod, 2, h, 2 * h);
        Tensor gate1 = slice_axis(mod, 2, 2 * h, 3 * h);
        Tensor shift2 = slice_axis(mod, 2, 3 * h, 4 * h);
        Tensor scale2 = slice_axis(mod, 2, 4 * h, 5 * h);
        Tensor gate2 = slice_axis(mod, 2, 5 * h, 6 * h);

        Tensor yn = modulate(rms_norm(x, lp.attn_norm_w, kNormEps), shift1, scale1);
        Tensor q = linear(yn, lp.wq, lp.bq);
        Tensor k = linear(yn, lp.wk, lp.bk);
        Tensor v = linear(yn, lp.wv, lp.bv);
        auto [qn_, kn_] = qk_norm(q, k, lp.q_norm_w, lp.k_norm_w, H, kNormEps);
        Tensor qh = apply_rope_nd(reshape(qn_, {bt, B, H, d}), tbl);
        Tensor kh = apply_rope_nd(reshape(kn_, {bt, B, H, d}), tbl);
        Tensor vh = reshape(v, {bt, B, H, d});

        Tensor k_full = kh, v_full = vh;
        if (cached > 0) {
            const auto& lkv = cache.layers[static_cast<size_t>(l)];
            Tensor ck = Tensor::from_data({bt, cached, H, d}, lkv.k);
            Tensor cv = Tensor::from_data({bt, cached, H, d}, lkv.v);
            k_full = concat_axis(ck, kh, 1);
            v_full = concat_axis(cv, vh, 1);
        }
        Tensor att = linear(masked_softmax_attention(qh, k_full, v_full, imask, att_scale), lp.wo,
                            lp.bo);
        x = add(x, mul(gate1, att));
        Tensor m2 = mlp_block(modulate(rms_norm(x, lp.mlp_norm_w, kNormEps), shift2, scale2), lp);
        x = add(x, mul(gate2, m2));
    }

    Tensor yf = rms_norm(x, Tensor(), kNormEps);
    Tensor fmod = repeat_interleave(reshape(linear(cond, final_adaln_w_, final_adaln_b_), {bt, 1, 2 * h}),
                                    1, B);
    Tensor fshift = slice_axis(fmod, 2, 0, h);
    Tensor fscale = slice_axis(fmod, 2, h, 2 * h);
    Tensor pred = linear(modulate(yf, fshift, fscale), head_w_, head_b_);
    return batched ? pred : reshape(pred, {B, ch});
}

void Model::commit_clean_block(const Tensor& clean_block, KvCache& cache,
                               int64_t block_index) const {
    NoGradGuard ng;
    const int64_t B = cfg_.layout.block_size;
    const int64_t ch = cfg_.channels;
    const int64_t H = cfg_.heads;
    const int64_t d = cfg_.head_dim();

    const bool batched = clean_block.rank() == 3;
    const int64_t bt = batched ? clean_block.dim(0) : 1;
    const Shape want = batched ? Shape{bt, B, ch} : Shape{B, ch};
    if (clean_block.shape() != want) {
        throw ShapeError("commit_clean_block: block must be " + shape_str(want));
    }
    if (cache.committed != block_index) {
        throw Error("commit_clean_block: out-of-order commit, cache holds " +
                    std::to_string(cache.committed) + " blocks but block index is " +
                    std::to_string(block_index));
    }
    if (cache.batch != bt) throw ShapeError("commit_clean_block: cache batch mismatch");
    cache.validate();

    const BoolMatrix mask = inference_mask(block_index, cfg_.layout);
    const RopeTable& tbl = block_tables_[static_cast<size_t>(block_index)];
    const float att_scale = 1.0f / std::sqrt(static_cast<float>(d));
    const int64_t cached = cache.cached_tokens();

    Tensor x = linear(batched ? clean_block : reshape(clean_block, {1, B, ch}), patchify_w_,
                      patchify_b_);
    for (int64_t l = 0; l < cfg_.layers; ++l) {
        const auto& lp = layers_[static_cast<size_t>(l)];
        Tensor yc = rms_norm(x, lp.attn_norm_w, kNormEps);
        Tensor q = linear(yc, lp.wq, lp.bq);
        Tensor k = linear(yc, lp.wk, lp.bk);
        Tensor v = linear(yc, lp.wv, lp.bv);
        auto [qn_, kn_] = qk_norm(q, k, lp.q_norm_w, lp.k_norm_w, H, kNormEps);
        Tensor qh = apply_rope_nd(reshape(qn_, {bt, B, H, d}), tbl);
        Tensor kh = apply_rope_nd(reshape(kn_, {bt, B, H, d}), tbl);
        Tensor vh = reshape(v, {bt, B, H, d});

        Tensor k_full = kh, v_full = vh;
        if (cached > 0) {
            const auto& lkv = cache.layers[static_cast<size_t>(l)];
            Tensor ck = Tensor::from_data({bt, cached, H, d}, lkv.k);
            Tensor cv = Tensor::from_data({bt, cached, H, d}, lkv.v);
            k_full = concat_axis(ck, kh, 1);
            v_full = concat_axis(cv, vh, 1);
        }

        // Append this block's keys/values; the block (batch, B, H, d) rows
        // are spliced after each sample's existing tokens.
        auto& lkv = cache.layers[static_cast<size_t>(l)];
        const auto pk = kh.data();
        const auto pv = vh.data();
        std::vector<float> nk(static_cast<size_t>(bt * (cached + B) * H * d));
        std::vector<float> nv(nk.size());
        for (int64_t b = 0; b < bt; ++b) {
            if (cached > 0) {
                std::memcpy(nk.data() + b * (cached + B) * H * d, lkv.k.data() + b * cached * H * d,
                            static_cast<size_t>(cached * H * d) * sizeof(float));
                std::memcpy(nv.data() + b * (cached + B) * H * d, lkv.v.data() + b * cached * H * d,
                            static_cast<size_t>(cached * H * d) * sizeof(float));
            }
            std::memcpy(nk.data() + (b * (cached + B) + cached) * H * d, pk.data() + b * B * H * d,
                        static_cast<size_t>(B * H * d) * sizeof(float));
            std::memcpy(nv.data() + (b * (cached + B) + cached) * H * d, pv.data() + b * B * H * d,
                        static_cast<size_t>(B * H * d) * sizeof(float));
        }
        lkv.k = std::move(nk);
        lkv.v = std::move(nv);

        Tensor att = linear(masked_softmax_attention(qh, k_full, v_full, mask, att_scale), lp.wo,
                            lp.bo);
        x = add(x, att);
        x = add(x, mlp_block(rms_norm(x, lp.mlp_norm_w, kNormEps), lp));
    }
    cache.committed += 1;
}

KvCache Model::make_cache(int64_t batch) const {
    KvCache c;
    c.batch = batch;
    c.heads = cfg_.heads;
    c.head_dim = cfg_.head_dim();
    c.block_size = cfg_.layout.block_size;
    c.committed = 0;
    c.layers.resize(static_cast<size_t>(cfg_.layers));
    return c;
}

}  // namespace acdit
