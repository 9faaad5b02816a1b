#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "acdit/tensor.hpp"

namespace acdit {

// Uniform view over training data: per-sample grids (grid..., ch) plus a
// class label. Sample contents are a pure function of the index, so batches
// can be materialized on demand.
class Dataset {
   public:
    virtual ~Dataset() = default;
    virtual int64_t size() const = 0;
    virtual Shape sample_shape() const = 0;  // (grid..., ch)
    virtual int64_t num_labels() const = 0;
    virtual int64_t label_of(int64_t index) const = 0;
    virtual void fill(int64_t index, std::span<float> out) const = 0;

    int64_t sample_numel() const { return shape_numel(sample_shape()); }
};

enum class SyntheticKind { kBlobs, kGradients, kVideo };

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::kBlobs;
    int64_t classes = 4;
    std::vector<int64_t> grid;  // token extents, e.g. {16,16} or {frames,H,W}
    uint64_t seed = 7;
    int64_t count = 4096;

    int64_t channels() const { return kind == SyntheticKind::kGradients ? 3 : 1; }
};

std::unique_ptr<Dataset> make_synthetic(const SyntheticSpec& spec);

// Exhaustive average over the class's samples (the population statistic the
// generators are built to make computable).
std::vector<float> class_mean(const Dataset& ds, int64_t cls, int64_t max_samples = 0);

// ---- latent container (binary, little-endian) ----
// magic "ACLT", u32 version, u8 dtype (0 = f32), u8 rank, u32 extents[rank]
// (per-sample shape incl. channels), u32 count, i32 labels[count], payload.
struct LatentContainer {
    Shape sample_shape;          // (grid..., ch)
    std::vector<int32_t> labels;
    std::vector<float> payload;  // count * numel(sample_shape)

    int64_t count() const { return static_cast<int64_t>(labels.size()); }
};

void write_latent_container(const std::string& path, const LatentContainer& c);
LatentContainer read_latent_container(const std::string& path);

std::unique_ptr<Dataset> make_container_dataset(LatentContainer c);

}  // namespace acdit
