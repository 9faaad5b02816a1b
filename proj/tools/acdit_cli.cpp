#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "acdit/analysis.hpp"
#include "acdit/checkpoint.hpp"
#include "acdit/config.hpp"
#include "acdit/engine.hpp"
#include "acdit/ppm.hpp"

namespace fs = std::filesystem;
using namespace acdit;

namespace {

std::vector<int64_t> parse_int_list(const std::string& s) {
    std::vector<int64_t> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        if (!part.empty()) out.push_back(std::stoll(part));
    }
    return out;
}

int cmd_train(const std::string& config_path, const std::string& resume_path) {
    RunConfig rc = load_run_config(config_path);
    auto dataset = make_dataset(rc);
    if (dataset->num_labels() > rc.labels) {
        throw ParseError("train: dataset has " + std::to_string(dataset->num_labels()) +
                         " classes but config declares " + std::to_string(rc.labels));
    }
    Trainer trainer(make_model_config(rc), make_trainer_config(rc), make_noise_schedule(rc));
    if (!resume_path.empty()) {
        restore_trainer(trainer, load_checkpoint(resume_path));
        std::cout << "resumed from " << resume_path << " at step " << trainer.step() << "\n";
    }

    fs::create_directories(rc.out_dir);
    const std::string config_text = emit_run_config(rc);
    MetricsLogger metrics((fs::path(rc.out_dir) / "metrics.csv").string());

    while (trainer.step() < rc.steps) {
        const auto t0 = std::chrono::steady_clock::now();
        const float loss = trainer.train_step(*dataset);
        const double ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        metrics.log(trainer.step(), trainer.last_lr(), loss, ms);
        if (rc.checkpoint_every > 0 && trainer.step() % rc.checkpoint_every == 0 &&
            trainer.step() < rc.steps) {
            const std::string p =
                (fs::path(rc.out_dir) / ("ckpt_" + std::to_string(trainer.step()) + ".acdt")).string();
            save_checkpoint(p, trainer, config_text);
        }
        if (trainer.step() % 50 == 0 || trainer.step() == rc.steps) {
            std::cout << "step " << trainer.step() << " loss " << loss << " lr " << trainer.last_lr()
                      << "\n";
        }
    }
    metrics.flush();
    const std::string final_path = (fs::path(rc.out_dir) / "checkpoint.acdt").string();
    save_checkpoint(final_path, trainer, config_text);
    std::cout << "checkpoint written to " << final_path << "\n";
    return 0;
}

int cmd_sample(const std::string& ckpt_path, const std::string& labels_arg, int64_t count,
               uint64_t seed, const std::string& out_dir, const std::string& which_params,
               int64_t steps_override, double guidance_override, const std::string& mode_override) {
    CheckpointData ckpt = load_checkpoint(ckpt_path);
    RunConfig rc = parse_run_config(ckpt.config_text);
    if (steps_override > 0) rc.sampler_steps = steps_override;
    if (guidance_override >= 0.0) rc.guidance = guidance_override;
    if (!mode_override.empty()) rc.sampler_mode = mode_override;

    Model model(make_model_config(rc));
    const auto& source = which_params == "raw" ? ckpt.params : ckpt.ema;
    for (const auto& a : source) model.set_param(a.name, a.values);

    std::vector<int64_t> class_list = parse_int_list(labels_arg);
    if (class_list.empty()) throw ParseError("sample: empty label list");
    for (int64_t lab : class_list) {
        if (lab < 0 || lab >= rc.labels) {
            throw ParseError("sample: label " + std::to_string(lab) + " out of range [0," +
                             std::to_string(rc.labels) + ")");
        }
    }
    std::vector<int64_t> labels;
    for (int64_t lab : class_list) {
        for (int64_t i = 0; i < count; ++i) labels.push_back(lab);
    }

    NoiseSchedule ns = make_noise_schedule(rc);
    SamplerConfig sc = make_sampler_config(rc);
    Rng rng(seed);
    const auto grids = sample_grids(model, ns, sc, labels, rng, true);

    fs::create_directories(out_dir);
    const auto& grid = rc.grid;
    const int64_t per = shape_numel(grid) * rc.channels;
    for (size_t s = 0; s < labels.size(); ++s) {
        const std::string stem =
            "sample_c" + std::to_string(labels[s]) + "_" + std::to_string(s % static_cast<size_t>(count));
        std::span<const float> vals(grids.data() + s * static_cast<size_t>(per),
                                    static_cast<size_t>(per));
        if (grid.size() == 2) {
            write_ppm((fs::path(out_dir) / (stem + ".ppm")).string(), grid[0], grid[1], rc.channels,
                      vals);
        } else if (grid.size() == 3) {
            const fs::path dir = fs::path(out_dir) / stem;
            fs::create_directories(dir);
            const int64_t frame = grid[1] * grid[2] * rc.channels;
            char name[32];
            for (int64_t f = 0; f < grid[0]; ++f) {
                std::snprintf(name, sizeof(name), "frame_%04lld.ppm", static_cast<long long>(f));
                write_ppm((dir / name).string(), grid[1], grid[2], rc.channels,
                          vals.subspan(static_cast<size_t>(f * frame), static_cast<size_t>(frame)));
            }
        } else {
            throw ParseError("sample: only 2-D and 3-D grids can be exported");
        }
    }
    std::cout << "wrote " << labels.size() << " samples to " << out_dir << "\n";
    return 0;
}

int cmd_mask_dump(int64_t num_blocks, int64_t block_size) {
    if (num_blocks < 1 || block_size < 1) throw ParseError("mask-dump: N and B must be >= 1");
    BlockLayout layout = build_layout({num_blocks * block_size}, {block_size});
    ScamMask scam = build_scam(layout);
    const int64_t n = 2 * layout.seq_len;
    std::string line;
    for (int64_t r = 0; r < n; ++r) {
        line.clear();
        for (int64_t c = 0; c < n; ++c) {
            if (c > 0 && c % block_size == 0) line += ' ';
            line += scam.m.at(r, c) ? '1' : '0';
        }
        std::cout << line << "\n";
    }
    return 0;
}

int cmd_flops(const std::string& pairs_arg, int64_t seq_len, const std::string& block_sizes_arg,
              int64_t hidden, int64_t heads, double theta) {
    if (theta <= 0.0) theta = 12.0 * static_cast<double>(hidden) * static_cast<double>(hidden);
    std::vector<std::pair<int64_t, int64_t>> layouts;
    if (!pairs_arg.empty()) {
        std::stringstream ss(pairs_arg);
        std::string part;
        while (std::getline(ss, part, ',')) {
            const size_t colon = part.find(':');
            if (colon == std::string::npos) {
                throw ParseError("flops: --pairs entries must be L:B, got '" + part + "'");
            }
            layouts.emplace_back(std::stoll(part.substr(0, colon)), std::stoll(part.substr(colon + 1)));
        }
    } else {
        if (seq_len <= 0) throw ParseError("flops: need --pairs or --seq-len");
        for (int64_t b : parse_int_list(block_sizes_arg.empty() ? std::to_string(seq_len)
                                                                : block_sizes_arg)) {
            layouts.emplace_back(seq_len, b);
        }
    }
    CostParams base;
    base.hidden = hidden;
    base.heads = heads;
    base.theta = theta;
    emit_cost_csv(std::cout, cost_curve(layouts, base));
    return 0;
}

int cmd_gen_data(const std::string& kind, int64_t classes, const std::string& grid_arg,
                 int64_t count, uint64_t seed, const std::string& out_path) {
    SyntheticSpec spec;
    if (kind == "blobs") spec.kind = SyntheticKind::kBlobs;
    else if (kind == "gradients") spec.kind = SyntheticKind::kGradients;
    else if (kind == "video") spec.kind = SyntheticKind::kVideo;
    else throw ParseError("gen-data: unknown kind '" + kind + "'");
    spec.classes = classes;
    spec.seed = seed;
    spec.count = count;
    for (int64_t e : parse_int_list(grid_arg)) spec.grid.push_back(e);
    // accept 16x16 as well as 16,16
    if (spec.grid.size() == 1 && grid_arg.find('x') != std::string::npos) {
        spec.grid.clear();
        std::stringstream ss(grid_arg);
        std::string part;
        while (std::getline(ss, part, 'x')) spec.grid.push_back(std::stoll(part));
    }

    auto ds = make_synthetic(spec);
    LatentContainer c;
    c.sample_shape = ds->sample_shape();
    const int64_t n = ds->sample_numel();
    c.labels.resize(static_cast<size_t>(count));
    c.payload.resize(static_cast<size_t>(count * n));
    for (int64_t i = 0; i < count; ++i) {
        c.labels[static_cast<size_t>(i)] = static_cast<int32_t>(ds->label_of(i));
        ds->fill(i, {c.payload.data() + i * n, static_cast<size_t>(n)});
    }
    write_latent_container(out_path, c);
    std::cout << "wrote " << count << " samples (" << shape_str(c.sample_shape) << ") to "
              << out_path << "\n";
    return 0;
}

int cmd_ingest(const std::string& path) {
    LatentContainer c = read_latent_container(path);
    std::vector<int64_t> hist;
    for (int32_t l : c.labels) {
        if (l < 0) throw IoError(path + ": negative label");
        if (static_cast<size_t>(l) >= hist.size()) hist.resize(static_cast<size_t>(l) + 1, 0);
        ++hist[static_cast<size_t>(l)];
    }
    std::cout << "container: " << c.count() << " samples of shape " << shape_str(c.sample_shape)
              << "\n";
    for (size_t l = 0; l < hist.size(); ++l) {
        std::cout << "  class " << l << ": " << hist[l] << " samples\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"blockwise autoregressive conditional diffusion toolkit"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "train a model from a config file");
    std::string config_path, resume_path;
    train->add_option("--config", config_path, "run config file")->required();
    train->add_option("--resume", resume_path, "checkpoint to resume from");

    auto* sample = app.add_subcommand("sample", "sample grids from a checkpoint");
    std::string ckpt_path, labels_arg = "0", out_dir = "samples", which = "ema", mode_override;
    int64_t count = 1, steps_override = 0;
    uint64_t sample_seed = 0;
    double guidance_override = -1.0;
    sample->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
    sample->add_option("--labels", labels_arg, "comma-separated class labels");
    sample->add_option("--count", count, "samples per label");
    sample->add_option("--seed", sample_seed, "sampling seed");
    sample->add_option("--out", out_dir, "output directory");
    sample->add_option("--params", which, "ema or raw")->check(CLI::IsMember({"ema", "raw"}));
    sample->add_option("--steps", steps_override, "override sampler steps");
    sample->add_option("--guidance", guidance_override, "override guidance scale");
    sample->add_option("--mode", mode_override, "override sampler mode")
        ->check(CLI::IsMember({"", "deterministic", "ancestral"}));

    auto* mask = app.add_subcommand("mask-dump", "print the training attention mask");
    int64_t mask_n = 2, mask_b = 1;
    mask->add_option("--blocks", mask_n, "number of blocks N")->required();
    mask->add_option("--block-size", mask_b, "tokens per block B")->required();

    auto* flops = app.add_subcommand("flops", "emit the attention cost model as CSV");
    std::string pairs_arg, block_sizes_arg;
    int64_t fl_seq = 0, fl_hidden = 1024, fl_heads = 16;
    double fl_theta = 0.0;
    flops->add_option("--pairs", pairs_arg, "comma-separated L:B pairs");
    flops->add_option("--seq-len", fl_seq, "sequence length L");
    flops->add_option("--block-sizes", block_sizes_arg, "comma-separated block sizes");
    flops->add_option("--hidden", fl_hidden, "hidden size h");
    flops->add_option("--heads", fl_heads, "attention heads n");
    flops->add_option("--theta", fl_theta, "per-layer parameter count (default 12*h^2)");

    auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset container");
    std::string gen_kind = "blobs", gen_grid = "16x16", gen_out = "data.aclt";
    int64_t gen_classes = 4, gen_count = 512;
    uint64_t gen_seed = 7;
    gen->add_option("--kind", gen_kind, "blobs | gradients | video");
    gen->add_option("--classes", gen_classes, "number of classes");
    gen->add_option("--grid", gen_grid, "grid extents, e.g. 16x16 or 8x16x16");
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--out", gen_out, "output container path")->required();

    auto* ingest = app.add_subcommand("ingest", "validate and summarize a latent container");
    std::string ingest_path;
    ingest->add_option("--path", ingest_path, "container file")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, resume_path);
        if (sample->parsed()) {
            return cmd_sample(ckpt_path, labels_arg, count, sample_seed, out_dir, which,
                              steps_override, guidance_override, mode_override);
        }
        if (mask->parsed()) return cmd_mask_dump(mask_n, mask_b);
        if (flops->parsed()) {
            return cmd_flops(pairs_arg, fl_seq, block_sizes_arg, fl_hidden, fl_heads, fl_theta);
        }
        if (gen->parsed()) {
            return cmd_gen_data(gen_kind, gen_classes, gen_grid, gen_count, gen_seed, gen_out);
        }
        if (ingest->parsed()) return cmd_ingest(ingest_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
