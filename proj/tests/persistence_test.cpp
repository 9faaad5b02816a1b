#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "acdit/checkpoint.hpp"
#include "acdit/config.hpp"
#include "acdit/ppm.hpp"

using namespace acdit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("acdit_test_" + std::to_string(reinterpret_cast<uintptr_t>(this)) + "_" +
                std::to_string(std::rand()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

RunConfig tiny_run() {
    RunConfig rc;
    rc.grid = {8};
    rc.block = {4};
    rc.layers = 1;
    rc.hidden = 16;
    rc.heads = 2;
    rc.mlp = 32;
    rc.channels = 1;
    rc.timesteps = 20;
    rc.labels = 2;
    rc.steps = 8;
    rc.batch = 2;
    rc.warmup = 1;
    rc.data_classes = 2;
    return rc;
}

class ConstDataset : public Dataset {
   public:
    int64_t size() const override { return 8; }
    Shape sample_shape() const override { return {8, 1}; }
    int64_t num_labels() const override { return 2; }
    int64_t label_of(int64_t index) const override { return index % 2; }
    void fill(int64_t index, std::span<float> out) const override {
        for (size_t i = 0; i < out.size(); ++i) {
            out[i] = 0.1f * static_cast<float>(i) - 0.3f * static_cast<float>(index % 2);
        }
    }
};

}  // namespace

TEST_CASE("run config: emit -> parse -> emit is bit-identical") {
    RunConfig c;
    c.grid = {16, 32};
    c.block = {8, 16};
    c.peak_lr = 2.7182818284590452e-4;
    c.ema_decay = 0.99991234;
    c.label_drop = 0.1234567f;
    c.data_kind = "video";
    c.grid = {4, 16, 32};
    c.block = {2, 8, 16};
    c.out_dir = "runs/demo";
    const std::string text1 = emit_run_config(c);
    const RunConfig parsed = parse_run_config(text1);
    const std::string text2 = emit_run_config(parsed);
    CHECK(text1 == text2);
    CHECK(parsed.peak_lr == c.peak_lr);
    CHECK(parsed.label_drop == c.label_drop);
    CHECK(parsed.grid == c.grid);
}

TEST_CASE("run config: parse errors carry line numbers") {
    CHECK_THROWS_AS(parse_run_config("steps = 5\n"), ParseError);          // key outside section
    CHECK_THROWS_AS(parse_run_config("[train]\nbogus_key = 5\n"), ParseError);
    CHECK_THROWS_AS(parse_run_config("[nope]\nx = 1\n"), ParseError);
    CHECK_THROWS_AS(parse_run_config("[train]\nsteps 5\n"), ParseError);   // missing '='
    CHECK_THROWS_AS(parse_run_config("[train]\nsteps = abc\n"), ParseError);
    CHECK_THROWS_AS(parse_run_config("[layout]\ngrid = 8x8\nblock = 4\n"), ParseError);
}

TEST_CASE("checkpoint: save/load round-trip is bit-exact") {
    TempDir dir;
    RunConfig rc = tiny_run();
    Trainer trainer(make_model_config(rc), make_trainer_config(rc), make_noise_schedule(rc));
    ConstDataset ds;
    for (int i = 0; i < 3; ++i) trainer.train_step(ds);

    const std::string path = dir.file("ck.acdt");
    save_checkpoint(path, trainer, emit_run_config(rc));
    const CheckpointData ck = load_checkpoint(path);
    CHECK(ck.step == 3);
    CHECK(ck.config_text == emit_run_config(rc));
    REQUIRE(ck.params.size() == trainer.model().params().size());
    for (size_t i = 0; i < ck.params.size(); ++i) {
        const auto& [name, p] = trainer.model().params()[i];
        REQUIRE(ck.params[i].name == name);
        REQUIRE(ck.params[i].shape == p.shape());
        REQUIRE(ck.params[i].values.size() == static_cast<size_t>(p.size()));
        for (size_t j = 0; j < ck.params[i].values.size(); ++j) {
            REQUIRE(ck.params[i].values[j] == p.data()[j]);
            REQUIRE(ck.ema[i].values[j] == trainer.ema()[i][j]);
            REQUIRE(ck.adam_m[i].values[j] == trainer.adam_m()[i][j]);
            REQUIRE(ck.adam_v[i].values[j] == trainer.adam_v()[i][j]);
        }
    }
    const auto rs = trainer.rng_state();
    for (int i = 0; i < 4; ++i) CHECK(ck.rng.s[i] == rs.s[i]);
}

TEST_CASE("checkpoint: resumed training is bit-identical to the uninterrupted run") {
    TempDir dir;
    RunConfig rc = tiny_run();
    ConstDataset ds;

    Trainer straight(make_model_config(rc), make_trainer_config(rc), make_noise_schedule(rc));
    std::vector<float> losses;
    for (int i = 0; i < 8; ++i) losses.push_back(straight.train_step(ds));

    Trainer half(make_model_config(rc), make_trainer_config(rc), make_noise_schedule(rc));
    for (int i = 0; i < 4; ++i) half.train_step(ds);
    const std::string path = dir.file("half.acdt");
    save_checkpoint(path, half, emit_run_config(rc));

    Trainer resumed(make_model_config(rc), make_trainer_config(rc), make_noise_schedule(rc));
    restore_trainer(resumed, load_checkpoint(path));
    CHECK(resumed.step() == 4);
    for (int i = 4; i < 8; ++i) {
        REQUIRE(resumed.train_step(ds) == losses[static_cast<size_t>(i)]);
    }
}

TEST_CASE("checkpoint: bad magic, truncation, version are rejected with diagnostics") {
    TempDir dir;
    RunConfig rc = tiny_run();
    Trainer trainer(make_model_config(rc), make_trainer_config(rc), make_noise_schedule(rc));
    const std::string path = dir.file("ck.acdt");
    save_checkpoint(path, trainer, emit_run_config(rc));

    // truncate
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
        std::ofstream out(dir.file("trunc.acdt"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_checkpoint(dir.file("trunc.acdt")), IoError);

    {
        std::ofstream out(dir.file("bad.acdt"), std::ios::binary);
        out << "NOPE-not-a-checkpoint";
    }
    CHECK_THROWS_AS(load_checkpoint(dir.file("bad.acdt")), IoError);
    CHECK_THROWS_AS(load_checkpoint(dir.file("missing.acdt")), IoError);
}

TEST_CASE("latent container: round-trip bit-exact, truncation names byte counts") {
    TempDir dir;
    LatentContainer c;
    c.sample_shape = {4, 4, 1};
    c.labels = {0, 1, 2};
    c.payload.resize(3 * 16);
    for (size_t i = 0; i < c.payload.size(); ++i) c.payload[i] = 0.25f * static_cast<float>(i) - 3.0f;

    const std::string path = dir.file("lat.aclt");
    write_latent_container(path, c);
    const LatentContainer back = read_latent_container(path);
    CHECK(back.sample_shape == c.sample_shape);
    CHECK(back.labels == c.labels);
    REQUIRE(back.payload.size() == c.payload.size());
    for (size_t i = 0; i < c.payload.size(); ++i) REQUIRE(back.payload[i] == c.payload[i]);

    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
        std::ofstream out(dir.file("trunc.aclt"), std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 7));
    }
    try {
        read_latent_container(dir.file("trunc.aclt"));
        FAIL("expected IoError");
    } catch (const IoError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("bytes") != std::string::npos);  // names expected vs actual
    }
    CHECK_THROWS_AS(read_latent_container(dir.file("nope.aclt")), IoError);
}

TEST_CASE("synthetic datasets are pure functions of (class, seed, index)") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::kBlobs;
    spec.classes = 4;
    spec.grid = {16, 16};
    spec.seed = 7;
    spec.count = 64;
    auto a = make_synthetic(spec);
    auto b = make_synthetic(spec);
    std::vector<float> va(static_cast<size_t>(a->sample_numel()));
    std::vector<float> vb(va.size());
    for (int64_t i = 0; i < 8; ++i) {
        a->fill(i, {va.data(), va.size()});
        b->fill(i, {vb.data(), vb.size()});
        REQUIRE(va == vb);
        REQUIRE(a->label_of(i) == i % 4);
    }
    for (float v : va) {
        REQUIRE(v >= -1.0f);
        REQUIRE(v <= 1.0f);
    }
}

TEST_CASE("blob class means are distinct and centered in their cells") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::kBlobs;
    spec.classes = 4;
    spec.grid = {16, 16};
    spec.seed = 3;
    spec.count = 512;
    auto ds = make_synthetic(spec);
    std::vector<std::vector<float>> means;
    for (int64_t c = 0; c < 4; ++c) means.push_back(class_mean(*ds, c, 128));
    for (int64_t c1 = 0; c1 < 4; ++c1) {
        for (int64_t c2 = c1 + 1; c2 < 4; ++c2) {
            double diff = 0.0;
            for (size_t i = 0; i < means[0].size(); ++i) {
                diff += std::abs(means[static_cast<size_t>(c1)][i] - means[static_cast<size_t>(c2)][i]);
            }
            CHECK(diff / static_cast<double>(means[0].size()) > 0.05);
        }
    }
}

TEST_CASE("video dataset exercises three position dimensions") {
    SyntheticSpec spec;
    spec.kind = SyntheticKind::kVideo;
    spec.classes = 2;
    spec.grid = {4, 8, 8};
    spec.seed = 5;
    spec.count = 8;
    auto ds = make_synthetic(spec);
    CHECK(ds->sample_shape() == Shape{4, 8, 8, 1});
    std::vector<float> v(static_cast<size_t>(ds->sample_numel()));
    ds->fill(0, {v.data(), v.size()});
    // the blob moves: consecutive frames differ
    bool moved = false;
    for (int64_t f = 1; f < 4 && !moved; ++f) {
        for (int64_t i = 0; i < 64; ++i) {
            if (v[static_cast<size_t>(f * 64 + i)] != v[static_cast<size_t>(i)]) {
                moved = true;
                break;
            }
        }
    }
    CHECK(moved);
}

TEST_CASE("ppm: write/read round-trip of the quantized image") {
    TempDir dir;
    std::vector<float> img(16 * 16, -2.0f);  // clamps to 0
    img[0] = 1.0f;
    img[1] = 0.0f;
    const std::string path = dir.file("img.ppm");
    write_ppm(path, 16, 16, 1, {img.data(), img.size()});
    const PpmImage back = read_ppm(path);
    CHECK(back.width == 16);
    CHECK(back.height == 16);
    CHECK(back.rgb[0] == 255);
    CHECK(back.rgb[3] == 128);  // 0.0 maps to 128 (rounded)
    CHECK(back.rgb[6] == 0);    // clamped
    CHECK_THROWS_AS(read_ppm(dir.file("missing.ppm")), IoError);
}
