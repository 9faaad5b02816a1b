#pragma once

#include <cstdint>
#include <vector>

#include "acdit/tensor.hpp"

namespace acdit {

// Maps a D-dimensional token grid onto N ordered blocks of B tokens each.
// Blocks are raster-ordered over block coordinates; offsets are raster-ordered
// within a block.
struct BlockLayout {
    std::vector<int64_t> grid_extents;  // tokens per dimension
    std::vector<int64_t> block_shape;   // block extent per dimension
    int64_t block_size = 0;             // B
    int64_t num_blocks = 0;             // N
    int64_t seq_len = 0;                // L = N * B

    // Bijection between grid raster index and (block, offset) slots.
    std::vector<int64_t> token_to_block;         // grid index -> block
    std::vector<int64_t> token_to_offset;        // grid index -> offset in block
    std::vector<int64_t> slot_to_token;          // block*B + offset -> grid index

    int dims() const { return static_cast<int>(grid_extents.size()); }
    // Grid coordinates of the token occupying sequence slot block*B+offset.
    std::vector<int64_t> slot_coords(int64_t slot) const;
};

BlockLayout build_layout(const std::vector<int64_t>& grid_extents,
                         const std::vector<int64_t>& block_shape);

// Attention permissions over the 2L training sequence: rows/cols [0, L) are
// clean tokens, [L, 2L) noise tokens, both in block order. Clean block i sees
// clean blocks j <= i; noise block i sees clean blocks j < i plus itself.
struct ScamMask {
    int64_t seq_len = 0;     // L
    int64_t num_blocks = 0;  // N
    int64_t block_size = 0;  // B
    BoolMatrix m;            // 2L x 2L
};

ScamMask build_scam(const BlockLayout& layout);

// Per-step inference mask: B noise queries over i*B cached clean keys plus
// their own B keys. Equals the matching rows/columns of the training mask.
BoolMatrix inference_mask(int64_t block_index, const BlockLayout& layout);

// Grid tensor (grid_extents..., ch) -> (N, B, ch), and the exact inverse.
Tensor blockify(const Tensor& x, const BlockLayout& layout);
Tensor unblockify(const Tensor& blocks, const BlockLayout& layout);

// Same reordering on raw values with an extra leading batch axis.
void blockify_raw(std::span<const float> grid, std::span<float> blocks, int64_t batch, int64_t ch,
                  const BlockLayout& layout);
void unblockify_raw(std::span<const float> blocks, std::span<float> grid, int64_t batch, int64_t ch,
                    const BlockLayout& layout);

}  // namespace acdit
