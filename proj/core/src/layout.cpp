#include "acdit/layout.hpp"

#include <string>

namespace acdit {

std::vector<int64_t> BlockLayout::slot_coords(int64_t slot) const {
    int64_t g = slot_to_token[static_cast<size_t>(slot)];
    std::vector<int64_t> coords(grid_extents.size());
    for (int d = dims() - 1; d >= 0; --d) {
        coords[static_cast<size_t>(d)] = g % grid_extents[static_cast<size_t>(d)];
        g /= grid_extents[static_cast<size_t>(d)];
    }
    return coords;
}

BlockLayout build_layout(const std::vector<int64_t>& grid_extents,
                         const std::vector<int64_t>& block_shape) {
    if (grid_extents.empty() || grid_extents.size() != block_shape.size()) {
        throw ShapeError("build_layout: grid and block dimensionality differ");
    }
    BlockLayout lo;
    lo.grid_extents = grid_extents;
    lo.block_shape = block_shape;
    lo.block_size = 1;
    lo.num_blocks = 1;
    lo.seq_len = 1;
    std::vector<int64_t> blocks_per_dim(grid_extents.size());
    for (size_t d = 0; d < grid_extents.size(); ++d) {
        if (grid_extents[d] <= 0 || block_shape[d] <= 0) {
            throw ShapeError("build_layout: zero extent in dimension " + std::to_string(d));
        }
        if (grid_extents[d] % block_shape[d] != 0) {
            throw ShapeError("build_layout: block extent " + std::to_string(block_shape[d]) +
                             " does not divide grid extent " + std::to_string(grid_extents[d]) +
                             " in dimension " + std::to_string(d));
        }
        blocks_per_dim[d] = grid_extents[d] / block_shape[d];
        lo.block_size *= block_shape[d];
        lo.num_blocks *= blocks_per_dim[d];
        lo.seq_len *= grid_extents[d];
    }

    lo.token_to_block.resize(static_cast<size_t>(lo.seq_len));
    lo.token_to_offset.resize(static_cast<size_t>(lo.seq_len));
    lo.slot_to_token.resize(static_cast<size_t>(lo.seq_len));

    const int D = lo.dims();
    std::vector<int64_t> coord(static_cast<size_t>(D), 0);
    for (int64_t g = 0; g < lo.seq_len; ++g) {
        // raster block index and in-block offset from coords
        int64_t block = 0, offset = 0;
        for (int d = 0; d < D; ++d) {
            block = block * blocks_per_dim[static_cast<size_t>(d)] +
                    coord[static_cast<size_t>(d)] / block_shape[static_cast<size_t>(d)];
            offset = offset * block_shape[static_cast<size_t>(d)] +
                     coord[static_cast<size_t>(d)] % block_shape[static_cast<size_t>(d)];
        }
        lo.token_to_block[static_cast<size_t>(g)] = block;
        lo.token_to_offset[static_cast<size_t>(g)] = offset;
        lo.slot_to_token[static_cast<size_t>(block * lo.block_size + offset)] = g;
        for (int d = D - 1; d >= 0; --d) {
            if (++coord[static_cast<size_t>(d)] < lo.grid_extents[static_cast<size_t>(d)]) break;
            coord[static_cast<size_t>(d)] = 0;
        }
    }
    return lo;
}

ScamMask build_scam(const BlockLayout& layout) {
    const int64_t L = layout.seq_len;
    const int64_t B = layout.block_size;
    ScamMask scam;
    scam.seq_len = L;
    scam.num_blocks = layout.num_blocks;
    scam.block_size = B;
    scam.m = BoolMatrix(2 * L, 2 * L, 0);
    for (int64_t qi = 0; qi < 2 * L; ++qi) {
        const bool q_noise = qi >= L;
        const int64_t q_block = (q_noise ? qi - L : qi) / B;
        uint8_t* row = scam.m.data.data() + qi * 2 * L;
        for (int64_t kj = 0; kj < 2 * L; ++kj) {
            const bool k_noise = kj >= L;
            const int64_t k_block = (k_noise ? kj - L : kj) / B;
            bool ok;
            if (!q_noise && !k_noise) {
                ok = k_block <= q_block;
            } else if (q_noise && !k_noise) {
                ok = k_block < q_block;
            } else if (q_noise && k_noise) {
                ok = k_block == q_block;
            } else {
                ok = false;  // clean never attends noise
            }
            row[kj] = ok ? 1 : 0;
        }
    }
    return scam;
}

BoolMatrix inference_mask(int64_t block_index, const BlockLayout& layout) {
    if (block_index < 0 || block_index >= layout.num_blocks) {
        throw ShapeError("inference_mask: block index " + std::to_string(block_index) +
                         " outside [0," + std::to_string(layout.num_blocks) + ")");
    }
    const int64_t B = layout.block_size;
    // Cached clean keys all precede the current noise block; its own keys are
    // fully visible. Everything retained is permitted.
    return BoolMatrix(B, (block_index + 1) * B, 1);
}

namespace {

void check_grid_shape(const Tensor& x, const BlockLayout& layout) {
    const auto& s = x.shape();
    if (static_cast<int>(s.size()) != layout.dims() + 1) {
        throw ShapeError("blockify: expected rank " + std::to_string(layout.dims() + 1) +
                         " (grid dims + channels), got " + shape_str(s));
    }
    for (int d = 0; d < layout.dims(); ++d) {
        if (s[static_cast<size_t>(d)] != layout.grid_extents[static_cast<size_t>(d)]) {
            throw ShapeError("blockify: grid shape " + shape_str(s) + " does not match layout");
        }
    }
}

}  // namespace

void blockify_raw(std::span<const float> grid, std::span<float> blocks, int64_t batch, int64_t ch,
                  const BlockLayout& layout) {
    const int64_t L = layout.seq_len;
    for (int64_t b = 0; b < batch; ++b) {
        const float* src = grid.data() + b * L * ch;
        float* dst = blocks.data() + b * L * ch;
        for (int64_t slot = 0; slot < L; ++slot) {
            const int64_t g = layout.slot_to_token[static_cast<size_t>(slot)];
            for (int64_t c = 0; c < ch; ++c) dst[slot * ch + c] = src[g * ch + c];
        }
    }
}

void unblockify_raw(std::span<const float> blocks, std::span<float> grid, int64_t batch, int64_t ch,
                    const BlockLayout& layout) {
    const int64_t L = layout.seq_len;
    for (int64_t b = 0; b < batch; ++b) {
        const float* src = blocks.data() + b * L * ch;
        float* dst = grid.data() + b * L * ch;
        for (int64_t slot = 0; slot < L; ++slot) {
            const int64_t g = layout.slot_to_token[static_cast<size_t>(slot)];
            for (int64_t c = 0; c < ch; ++c) dst[g * ch + c] = src[slot * ch + c];
        }
    }
}

Tensor blockify(const Tensor& x, const BlockLayout& layout) {
    check_grid_shape(x, layout);
    const int64_t ch = x.dim(x.rank() - 1);
    std::vector<float> out(static_cast<size_t>(x.size()));
    blockify_raw(x.data(), {out.data(), out.size()}, 1, ch, layout);
    return Tensor::from_data({layout.num_blocks, layout.block_size, ch}, std::move(out));
}

Tensor unblockify(const Tensor& blocks, const BlockLayout& layout) {
    if (blocks.rank() != 3 || blocks.dim(0) != layout.num_blocks ||
        blocks.dim(1) != layout.block_size) {
        throw ShapeError("unblockify: expected (" + std::to_string(layout.num_blocks) + "," +
                         std::to_string(layout.block_size) + ",ch), got " + shape_str(blocks.shape()));
    }
    const int64_t ch = blocks.dim(2);
    std::vector<float> out(static_cast<size_t>(blocks.size()));
    unblockify_raw(blocks.data(), {out.data(), out.size()}, 1, ch, layout);
    Shape gshape = layout.grid_extents;
    gshape.push_back(ch);
    return Tensor::from_data(std::move(gshape), std::move(out));
}

}  // namespace acdit
