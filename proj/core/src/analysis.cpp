#include "acdit/analysis.hpp"

#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "acdit/errors.hpp"

namespace acdit {

void CostParams::validate() const {
    if (seq_len < 1 || block_size < 1 || hidden < 1 || heads < 1 || theta <= 0.0) {
        throw ShapeError("cost params: all fields must be positive");
    }
    if (seq_len % block_size != 0) {
        throw ShapeError("cost params: block size " + std::to_string(block_size) +
                         " does not divide sequence length " + std::to_string(seq_len));
    }
}

double full_flops(const CostParams& p) {
    p.validate();
    const double L = static_cast<double>(p.seq_len);
    return 2.0 * L * p.theta + 4.0 * static_cast<double>(p.hidden + p.heads) * L * L;
}

int64_t qk_pairs_blockwise(int64_t seq_len, int64_t block_size) {
    if (seq_len < 1 || block_size < 1 || seq_len % block_size != 0) {
        throw ShapeError("qk_pairs_blockwise: block size must divide sequence length");
    }
    const int64_t nb = seq_len / block_size;
    int64_t sum = 0;
    for (int64_t i = 1; i <= nb; ++i) sum += i * block_size * block_size;
    const int64_t closed = (seq_len * block_size + seq_len * seq_len) / 2;
    if (sum != closed) {
        throw NumericError("qk_pairs_blockwise: summation " + std::to_string(sum) +
                           " disagrees with closed form " + std::to_string(closed));
    }
    return sum;
}

double blockwise_flops(const CostParams& p) {
    p.validate();
    const double L = static_cast<double>(p.seq_len);
    const double pairs = static_cast<double>(qk_pairs_blockwise(p.seq_len, p.block_size));
    return 2.0 * L * p.theta + 4.0 * static_cast<double>(p.hidden + p.heads) * pairs;
}

double saved_fraction(const CostParams& p) {
    p.validate();
    const double ratio = static_cast<double>(p.block_size) / static_cast<double>(p.seq_len);
    return (1.0 - ratio) / (2.0 + p.m() / p.k());
}

std::vector<CostRow> cost_curve(const std::vector<std::pair<int64_t, int64_t>>& layouts,
                                const CostParams& base) {
    std::vector<CostRow> rows;
    rows.reserve(layouts.size());
    for (const auto& [L, B] : layouts) {
        CostParams p = base;
        p.seq_len = L;
        p.block_size = B;
        rows.push_back({L, B, full_flops(p), blockwise_flops(p), saved_fraction(p)});
    }
    return rows;
}

void emit_cost_csv(std::ostream& os, const std::vector<CostRow>& rows) {
    os << "# flops convention: 1 multiply-accumulate = 2 flops\n";
    os << "L,B,full_flops,blockwise_flops,saved_fraction\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%lld,%.17g,%.17g,%.17g\n",
                      static_cast<long long>(r.seq_len), static_cast<long long>(r.block_size), r.full,
                      r.blockwise, r.saved);
        os << buf;
    }
}

std::vector<CostRow> parse_cost_csv(std::istream& is) {
    std::vector<CostRow> rows;
    std::string line;
    bool header_seen = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (!header_seen) {
            if (line != "L,B,full_flops,blockwise_flops,saved_fraction") {
                throw ParseError("cost csv: unexpected header '" + line + "'");
            }
            header_seen = true;
            continue;
        }
        CostRow r;
        long long L = 0, B = 0;
        if (std::sscanf(line.c_str(), "%lld,%lld,%lg,%lg,%lg", &L, &B, &r.full, &r.blockwise,
                        &r.saved) != 5) {
            throw ParseError("cost csv: malformed row '" + line + "'");
        }
        r.seq_len = L;
        r.block_size = B;
        rows.push_back(r);
    }
    if (!header_seen) throw ParseError("cost csv: missing header");
    return rows;
}

}  // namespace acdit
