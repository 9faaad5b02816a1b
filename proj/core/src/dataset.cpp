#include "acdit/dataset.hpp"

#include <cmath>
#include <cstring>

#include "acdit/rng.hpp"
#include "binio.hpp"

namespace acdit {

namespace {

uint64_t mix_index(uint64_t seed, int64_t index) {
    uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (static_cast<uint64_t>(index) + 1);
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

class SyntheticDataset : public Dataset {
   public:
    explicit SyntheticDataset(SyntheticSpec spec) : spec_(std::move(spec)) {
        if (spec_.classes < 1 || spec_.count < 1 || spec_.grid.empty()) {
            throw ShapeError("synthetic dataset: classes, count and grid must be set");
        }
        const size_t want = spec_.kind == SyntheticKind::kVideo ? 3 : 2;
        if (spec_.grid.size() != want) {
            throw ShapeError("synthetic dataset: grid rank " + std::to_string(spec_.grid.size()) +
                             " unsupported for this generator");
        }
        shape_ = spec_.grid;
        shape_.push_back(spec_.channels());
    }

    int64_t size() const override { return spec_.count; }
    Shape sample_shape() const override { return shape_; }
    int64_t num_labels() const override { return spec_.classes; }
    int64_t label_of(int64_t index) const override { return index % spec_.classes; }

    void fill(int64_t index, std::span<float> out) const override {
        if (index < 0 || index >= spec_.count) throw ShapeError("dataset: index out of range");
        if (static_cast<int64_t>(out.size()) != sample_numel()) {
            throw ShapeError("dataset: output buffer size mismatch");
        }
        const int64_t cls = label_of(index);
        Rng rng(mix_index(spec_.seed, index));
        switch (spec_.kind) {
            case SyntheticKind::kBlobs:
                fill_blob(cls, rng, out);
                break;
            case SyntheticKind::kGradients:
                fill_gradient(cls, rng, out);
                break;
            case SyntheticKind::kVideo:
                fill_video(cls, rng, out);
                break;
        }
    }

   private:
    // Class centers on a near-square lattice so conditional means are well
    // separated.
    void class_center(int64_t cls, int64_t H, int64_t W, double* cy, double* cx) const {
        const int64_t cols = static_cast<int64_t>(std::ceil(std::sqrt(static_cast<double>(spec_.classes))));
        const int64_t rows = (spec_.classes + cols - 1) / cols;
        const int64_t r = cls / cols, c = cls % cols;
        *cy = (static_cast<double>(r) + 0.5) / static_cast<double>(rows) * static_cast<double>(H);
        *cx = (static_cast<double>(c) + 0.5) / static_cast<double>(cols) * static_cast<double>(W);
    }

    static void render_blob(std::span<float> img, int64_t H, int64_t W, double cy, double cx,
                            double sigma, double bg, double peak) {
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                const double dy = static_cast<double>(y) + 0.5 - cy;
                const double dx = static_cast<double>(x) + 0.5 - cx;
                const double g = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
                img[static_cast<size_t>(y * W + x)] = static_cast<float>(bg + (peak - bg) * g);
            }
        }
    }

    void fill_blob(int64_t cls, Rng& rng, std::span<float> out) const {
        const int64_t H = spec_.grid[0], W = spec_.grid[1];
        double cy, cx;
        class_center(cls, H, W, &cy, &cx);
        cy += rng.uniform() * 2.0 - 1.0;
        cx += rng.uniform() * 2.0 - 1.0;
        const double peak = 0.75 + 0.2 * rng.uniform();
        const double sigma = std::max(1.5, static_cast<double>(std::min(H, W)) / 6.0);
        render_blob(out, H, W, cy, cx, sigma, -0.85, peak);
    }

    void fill_gradient(int64_t cls, Rng& rng, std::span<float> out) const {
        const int64_t H = spec_.grid[0], W = spec_.grid[1];
        // Two endpoint colors and an axis fixed per class.
        Rng crng(mix_index(spec_.seed ^ 0x5bd1e995, cls));
        float a[3], b[3];
        for (int c = 0; c < 3; ++c) {
            a[c] = static_cast<float>(crng.uniform() * 1.6 - 0.8);
            b[c] = static_cast<float>(crng.uniform() * 1.6 - 0.8);
        }
        const int axis = static_cast<int>(cls % 2);
        const float jitter = static_cast<float>(rng.uniform() * 0.2 - 0.1);
        for (int64_t y = 0; y < H; ++y) {
            for (int64_t x = 0; x < W; ++x) {
                const double s = axis == 0 ? static_cast<double>(x) / static_cast<double>(W - 1)
                                           : static_cast<double>(y) / static_cast<double>(H - 1);
                for (int c = 0; c < 3; ++c) {
                    float v = static_cast<float>(a[c] + (b[c] - a[c]) * s) + jitter;
                    out[static_cast<size_t>((y * W + x) * 3 + c)] = std::clamp(v, -1.0f, 1.0f);
                }
            }
        }
    }

    void fill_video(int64_t cls, Rng& rng, std::span<float> out) const {
        const int64_t F = spec_.grid[0], H = spec_.grid[1], W = spec_.grid[2];
        const double angle =
            2.0 * 3.14159265358979323846 * static_cast<double>(cls) / static_cast<double>(spec_.classes);
        const double speed = 0.8 + 0.4 * rng.uniform();
        double cy = static_cast<double>(H) / 2.0 + (rng.uniform() * 2.0 - 1.0);
        double cx = static_cast<double>(W) / 2.0 + (rng.uniform() * 2.0 - 1.0);
        double vy = speed * std::sin(angle);
        double vx = speed * std::cos(angle);
        const double sigma = std::max(1.0, static_cast<double>(std::min(H, W)) / 8.0);
        for (int64_t f = 0; f < F; ++f) {
            render_blob(out.subspan(static_cast<size_t>(f * H * W), static_cast<size_t>(H * W)), H, W,
                        cy, cx, sigma, -0.85, 0.9);
            cy += vy;
            cx += vx;
            if (cy < 0.0 || cy > static_cast<double>(H)) vy = -vy;
            if (cx < 0.0 || cx > static_cast<double>(W)) vx = -vx;
        }
    }

    SyntheticSpec spec_;
    Shape shape_;
};

class ContainerDataset : public Dataset {
   public:
    explicit ContainerDataset(LatentContainer c) : c_(std::move(c)) {
        num_labels_ = 0;
        for (int32_t l : c_.labels) num_labels_ = std::max<int64_t>(num_labels_, l + 1);
    }
    int64_t size() const override { return c_.count(); }
    Shape sample_shape() const override { return c_.sample_shape; }
    int64_t num_labels() const override { return num_labels_; }
    int64_t label_of(int64_t index) const override { return c_.labels[static_cast<size_t>(index)]; }
    void fill(int64_t index, std::span<float> out) const override {
        const int64_t n = sample_numel();
        std::memcpy(out.data(), c_.payload.data() + index * n,
                    static_cast<size_t>(n) * sizeof(float));
    }

   private:
    LatentContainer c_;
    int64_t num_labels_ = 0;
};

}  // namespace

std::unique_ptr<Dataset> make_synthetic(const SyntheticSpec& spec) {
    return std::make_unique<SyntheticDataset>(spec);
}

std::unique_ptr<Dataset> make_container_dataset(LatentContainer c) {
    return std::make_unique<ContainerDataset>(std::move(c));
}

std::vector<float> class_mean(const Dataset& ds, int64_t cls, int64_t max_samples) {
    const int64_t n = ds.sample_numel();
    std::vector<double> acc(static_cast<size_t>(n), 0.0);
    std::vector<float> buf(static_cast<size_t>(n));
    int64_t used = 0;
    for (int64_t i = 0; i < ds.size(); ++i) {
        if (ds.label_of(i) != cls) continue;
        ds.fill(i, {buf.data(), buf.size()});
        for (int64_t j = 0; j < n; ++j) acc[static_cast<size_t>(j)] += buf[static_cast<size_t>(j)];
        if (++used == max_samples) break;
    }
    if (used == 0) throw Error("class_mean: no samples of class " + std::to_string(cls));
    std::vector<float> mean(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j)
        mean[static_cast<size_t>(j)] = static_cast<float>(acc[static_cast<size_t>(j)] / used);
    return mean;
}

// ---------------------------------------------------------------------------
// latent container
// ---------------------------------------------------------------------------

namespace {

constexpr char kLatentMagic[4] = {'A', 'C', 'L', 'T'};
constexpr uint32_t kLatentVersion = 1;

}  // namespace

void write_latent_container(const std::string& path, const LatentContainer& c) {
    const int64_t n = shape_numel(c.sample_shape);
    if (c.payload.size() != static_cast<size_t>(n) * c.labels.size()) {
        throw ShapeError("latent container: payload size does not match count * sample size");
    }
    std::vector<uint8_t> b;
    b.insert(b.end(), kLatentMagic, kLatentMagic + 4);
    binio::put_u32(b, kLatentVersion);
    binio::put_u8(b, 0);  // dtype f32
    binio::put_u8(b, static_cast<uint8_t>(c.sample_shape.size()));
    for (int64_t e : c.sample_shape) binio::put_u32(b, static_cast<uint32_t>(e));
    binio::put_u32(b, static_cast<uint32_t>(c.labels.size()));
    for (int32_t l : c.labels) binio::put_u32(b, static_cast<uint32_t>(l));
    binio::put_bytes(b, c.payload.data(), c.payload.size() * sizeof(float));
    binio::write_file_atomic(path, b);
}

LatentContainer read_latent_container(const std::string& path) {
    const auto buf = binio::read_file(path);
    binio::Reader r{buf, 0, path};
    r.need(4, "magic");
    if (std::memcmp(buf.data(), kLatentMagic, 4) != 0) {
        throw IoError(path + ": bad magic, not a latent container");
    }
    r.pos = 4;
    const uint32_t version = r.u32("version");
    if (version != kLatentVersion) {
        throw IoError(path + ": unsupported container version " + std::to_string(version));
    }
    const uint8_t dtype = r.u8("dtype");
    if (dtype != 0) throw IoError(path + ": unsupported dtype tag " + std::to_string(dtype));
    const uint8_t rank = r.u8("rank");
    if (rank == 0) throw IoError(path + ": zero-rank sample shape");
    LatentContainer c;
    c.sample_shape.resize(rank);
    for (auto& e : c.sample_shape) e = r.u32("extent");
    const uint32_t count = r.u32("count");
    c.labels.resize(count);
    for (auto& l : c.labels) l = static_cast<int32_t>(r.u32("labels"));
    const size_t want = static_cast<size_t>(shape_numel(c.sample_shape)) * count * sizeof(float);
    if (buf.size() - r.pos != want) {
        throw IoError(path + ": payload has " + std::to_string(buf.size() - r.pos) +
                      " bytes, expected " + std::to_string(want));
    }
    c.payload.resize(want / sizeof(float));
    std::memcpy(c.payload.data(), buf.data() + r.pos, want);
    for (float v : c.payload) {
        if (!std::isfinite(v)) throw IoError(path + ": non-finite value in payload");
    }
    return c;
}

}  // namespace acdit
