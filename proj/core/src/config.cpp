#include "acdit/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace acdit {

namespace {

std::string fmt_f32(float v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

std::string fmt_f64(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_dims(const std::vector<int64_t>& dims) {
    std::string s;
    for (size_t i = 0; i < dims.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(dims[i]);
    }
    return s;
}

std::vector<int64_t> parse_dims(const std::string& s, int line_no) {
    std::vector<int64_t> dims;
    size_t pos = 0;
    while (pos < s.size()) {
        size_t next = s.find('x', pos);
        if (next == std::string::npos) next = s.size();
        const std::string part = s.substr(pos, next - pos);
        try {
            dims.push_back(std::stoll(part));
        } catch (...) {
            throw ParseError("config line " + std::to_string(line_no) + ": bad extent '" + part + "'");
        }
        pos = next + 1;
    }
    if (dims.empty()) {
        throw ParseError("config line " + std::to_string(line_no) + ": empty dimension list");
    }
    return dims;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct Setter {
    RunConfig* c;
    int line_no = 0;

    int64_t to_i(const std::string& v) const {
        try {
            return std::stoll(v);
        } catch (...) {
            throw ParseError("config line " + std::to_string(line_no) + ": bad integer '" + v + "'");
        }
    }
    uint64_t to_u(const std::string& v) const {
        try {
            return std::stoull(v);
        } catch (...) {
            throw ParseError("config line " + std::to_string(line_no) + ": bad integer '" + v + "'");
        }
    }
    double to_d(const std::string& v) const {
        try {
            size_t used = 0;
            const double d = std::stod(v, &used);
            if (used != v.size()) throw ParseError("");
            return d;
        } catch (...) {
            throw ParseError("config line " + std::to_string(line_no) + ": bad number '" + v + "'");
        }
    }
    bool to_b(const std::string& v) const {
        if (v == "true") return true;
        if (v == "false") return false;
        throw ParseError("config line " + std::to_string(line_no) + ": bad bool '" + v + "'");
    }

    void apply(const std::string& section, const std::string& key, const std::string& val) {
        auto& c_ = *c;
        if (section == "layout") {
            if (key == "grid") c_.grid = parse_dims(val, line_no);
            else if (key == "block") c_.block = parse_dims(val, line_no);
            else unknown(section, key);
        } else if (section == "model") {
            if (key == "layers") c_.layers = to_i(val);
            else if (key == "hidden") c_.hidden = to_i(val);
            else if (key == "heads") c_.heads = to_i(val);
            else if (key == "mlp") c_.mlp = to_i(val);
            else if (key == "channels") c_.channels = to_i(val);
            else if (key == "timesteps") c_.timesteps = to_i(val);
            else if (key == "labels") c_.labels = to_i(val);
            else if (key == "label_drop") c_.label_drop = static_cast<float>(to_d(val));
            else if (key == "shared_t") c_.shared_t = to_b(val);
            else if (key == "seed") c_.model_seed = to_u(val);
            else unknown(section, key);
        } else if (section == "schedule") {
            if (key == "beta_min") c_.beta_min = to_d(val);
            else if (key == "beta_max") c_.beta_max = to_d(val);
            else unknown(section, key);
        } else if (section == "train") {
            if (key == "steps") c_.steps = to_i(val);
            else if (key == "batch") c_.batch = to_i(val);
            else if (key == "warmup") c_.warmup = to_i(val);
            else if (key == "peak_lr") c_.peak_lr = to_d(val);
            else if (key == "floor_lr") c_.floor_lr = to_d(val);
            else if (key == "decay_fraction") c_.decay_fraction = to_d(val);
            else if (key == "weight_decay") c_.weight_decay = to_d(val);
            else if (key == "ema_decay") c_.ema_decay = to_d(val);
            else if (key == "seed") c_.seed = to_u(val);
            else if (key == "checkpoint_every") c_.checkpoint_every = to_i(val);
            else if (key == "out_dir") c_.out_dir = val;
            else unknown(section, key);
        } else if (section == "sampler") {
            if (key == "steps") c_.sampler_steps = to_i(val);
            else if (key == "mode") {
                if (val != "deterministic" && val != "ancestral") {
                    throw ParseError("config line " + std::to_string(line_no) +
                                     ": mode must be deterministic or ancestral");
                }
                c_.sampler_mode = val;
            } else if (key == "guidance") c_.guidance = to_d(val);
            else unknown(section, key);
        } else if (section == "data") {
            if (key == "kind") {
                if (val != "blobs" && val != "gradients" && val != "video" && val != "container") {
                    throw ParseError("config line " + std::to_string(line_no) + ": unknown data kind '" +
                                     val + "'");
                }
                c_.data_kind = val;
            } else if (key == "classes") c_.data_classes = to_i(val);
            else if (key == "seed") c_.data_seed = to_u(val);
            else if (key == "count") c_.data_count = to_i(val);
            else if (key == "path") c_.data_path = val;
            else unknown(section, key);
        } else {
            throw ParseError("config line " + std::to_string(line_no) + ": unknown section [" +
                             section + "]");
        }
    }

    [[noreturn]] void unknown(const std::string& section, const std::string& key) const {
        throw ParseError("config line " + std::to_string(line_no) + ": unknown key '" + key +
                         "' in section [" + section + "]");
    }
};

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    Setter setter{&c};
    std::istringstream is(text);
    std::string line, section;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ParseError("config line " + std::to_string(line_no) + ": unterminated section");
            }
            section = line.substr(1, line.size() - 2);
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ParseError("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (section.empty()) {
            throw ParseError("config line " + std::to_string(line_no) + ": key outside any section");
        }
        setter.line_no = line_no;
        setter.apply(section, key, val);
    }
    if (c.grid.size() != c.block.size()) {
        throw ParseError("config: grid and block dimensionality differ");
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError(path + ": cannot open config");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_run_config(ss.str());
}

std::string emit_run_config(const RunConfig& c) {
    std::ostringstream os;
    os << "[layout]\n";
    os << "grid = " << fmt_dims(c.grid) << "\n";
    os << "block = " << fmt_dims(c.block) << "\n";
    os << "\n[model]\n";
    os << "layers = " << c.layers << "\n";
    os << "hidden = " << c.hidden << "\n";
    os << "heads = " << c.heads << "\n";
    os << "mlp = " << c.mlp << "\n";
    os << "channels = " << c.channels << "\n";
    os << "timesteps = " << c.timesteps << "\n";
    os << "labels = " << c.labels << "\n";
    os << "label_drop = " << fmt_f32(c.label_drop) << "\n";
    os << "shared_t = " << (c.shared_t ? "true" : "false") << "\n";
    os << "seed = " << c.model_seed << "\n";
    os << "\n[schedule]\n";
    os << "beta_min = " << fmt_f64(c.beta_min) << "\n";
    os << "beta_max = " << fmt_f64(c.beta_max) << "\n";
    os << "\n[train]\n";
    os << "steps = " << c.steps << "\n";
    os << "batch = " << c.batch << "\n";
    os << "warmup = " << c.warmup << "\n";
    os << "peak_lr = " << fmt_f64(c.peak_lr) << "\n";
    os << "floor_lr = " << fmt_f64(c.floor_lr) << "\n";
    os << "decay_fraction = " << fmt_f64(c.decay_fraction) << "\n";
    os << "weight_decay = " << fmt_f64(c.weight_decay) << "\n";
    os << "ema_decay = " << fmt_f64(c.ema_decay) << "\n";
    os << "seed = " << c.seed << "\n";
    os << "checkpoint_every = " << c.checkpoint_every << "\n";
    os << "out_dir = " << c.out_dir << "\n";
    os << "\n[sampler]\n";
    os << "steps = " << c.sampler_steps << "\n";
    os << "mode = " << c.sampler_mode << "\n";
    os << "guidance = " << fmt_f64(c.guidance) << "\n";
    os << "\n[data]\n";
    os << "kind = " << c.data_kind << "\n";
    os << "classes = " << c.data_classes << "\n";
    os << "seed = " << c.data_seed << "\n";
    os << "count = " << c.data_count << "\n";
    os << "path = " << c.data_path << "\n";
    return os.str();
}

ModelConfig make_model_config(const RunConfig& c) {
    ModelConfig mc;
    mc.layers = c.layers;
    mc.hidden = c.hidden;
    mc.heads = c.heads;
    mc.mlp_dim = c.mlp;
    mc.channels = c.channels;
    mc.timesteps = c.timesteps;
    mc.num_labels = c.labels;
    mc.label_drop_prob = c.label_drop;
    mc.shared_timestep = c.shared_t;
    mc.init_seed = c.model_seed;
    mc.layout = build_layout(c.grid, c.block);
    mc.rope = make_rope_config(mc.head_dim(), c.grid);
    mc.validate();
    return mc;
}

TrainerConfig make_trainer_config(const RunConfig& c) {
    TrainerConfig tc;
    tc.steps = c.steps;
    tc.batch = c.batch;
    tc.lr.warmup = c.warmup;
    tc.lr.total = c.steps;
    tc.lr.decay_fraction = c.decay_fraction;
    tc.lr.peak = c.peak_lr;
    tc.lr.floor = c.floor_lr;
    tc.weight_decay = c.weight_decay;
    tc.ema_decay = c.ema_decay;
    tc.seed = c.seed;
    return tc;
}

NoiseSchedule make_noise_schedule(const RunConfig& c) {
    return make_linear_schedule(c.timesteps, c.beta_min, c.beta_max);
}

SamplerConfig make_sampler_config(const RunConfig& c) {
    SamplerConfig sc;
    sc.steps = c.sampler_steps;
    sc.mode = c.sampler_mode == "ancestral" ? SamplerMode::kAncestral : SamplerMode::kDeterministic;
    sc.guidance_scale = c.guidance;
    return sc;
}

std::unique_ptr<Dataset> make_dataset(const RunConfig& c) {
    if (c.data_kind == "container") {
        if (c.data_path.empty()) throw ParseError("config: data kind 'container' needs a path");
        return make_container_dataset(read_latent_container(c.data_path));
    }
    SyntheticSpec spec;
    spec.kind = c.data_kind == "gradients" ? SyntheticKind::kGradients
                : c.data_kind == "video"   ? SyntheticKind::kVideo
                                           : SyntheticKind::kBlobs;
    spec.classes = c.data_classes;
    spec.grid = c.grid;
    spec.seed = c.data_seed;
    spec.count = c.data_count;
    return make_synthetic(spec);
}

}  // namespace acdit
