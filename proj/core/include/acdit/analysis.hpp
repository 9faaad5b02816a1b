#pragma once

#include <cstdint>
#include <iosfwd>
#include <utility>
#include <vector>

namespace acdit {

// Inputs to the attention/FFN cost model. theta is the per-layer parameter
// count; multiply-accumulates count as 2 FLOPs throughout.
struct CostParams {
    int64_t seq_len = 0;     // L
    int64_t block_size = 0;  // B
    int64_t hidden = 0;      // h
    int64_t heads = 0;       // n
    double theta = 0.0;      // per-layer parameters

    double m() const { return theta / (static_cast<double>(hidden) * static_cast<double>(hidden)); }
    double k() const { return static_cast<double>(seq_len) / static_cast<double>(hidden); }
    void validate() const;
};

// Full-sequence attention cost: 2*L*theta + 4*(h+n)*L^2.
double full_flops(const CostParams& p);

// Q-K pairs under blockwise causal attention with cached context. Evaluates
// the explicit block sum and the closed form 0.5*(L/B + L^2/B^2)*B^2 and
// requires them to agree.
int64_t qk_pairs_blockwise(int64_t seq_len, int64_t block_size);

// 2*L*theta + 4*(h+n) * qk_pairs_blockwise.
double blockwise_flops(const CostParams& p);

// Fraction of full_flops avoided: (1 - B/L) / (2 + m/k). Zero iff B == L,
// approaching 1/2 as B/L and m/k vanish.
double saved_fraction(const CostParams& p);

struct CostRow {
    int64_t seq_len = 0;
    int64_t block_size = 0;
    double full = 0.0;
    double blockwise = 0.0;
    double saved = 0.0;
};

// One row per (L, B) pair; hidden/heads/theta come from `base`.
std::vector<CostRow> cost_curve(const std::vector<std::pair<int64_t, int64_t>>& layouts,
                                const CostParams& base);

// CSV with a `#` convention comment and a header row; parse inverts emit.
void emit_cost_csv(std::ostream& os, const std::vector<CostRow>& rows);
std::vector<CostRow> parse_cost_csv(std::istream& is);

}  // namespace acdit
