#include "kanfpn/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "kanfpn/error.hpp"

namespace kanfpn::config {

namespace {

using train::RunConfig;
using Setter = std::function<void(RunConfig&, const std::string&)>;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::int64_t to_int(const std::string& v) {
    std::int64_t out = 0;
    const auto* end = v.data() + v.size();
    auto [ptr, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError("expected an integer, got '" + v + "'");
    }
    return out;
}

double to_double(const std::string& v) {
    std::size_t used = 0;
    double out = 0.0;
    try {
        out = std::stod(v, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != v.size()) {
        throw ConfigError("expected a number, got '" + v + "'");
    }
    return out;
}

bool to_bool(const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") {
        return true;
    }
    if (v == "false" || v == "0" || v == "no") {
        return false;
    }
    throw ConfigError("expected true/false, got '" + v + "'");
}

std::vector<std::int64_t> to_int_list(const std::string& v) {
    std::vector<std::int64_t> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) {
            out.push_back(to_int(item));
        }
    }
    return out;
}

std::array<std::int64_t, 4> to_int4(const std::string& v) {
    const auto list = to_int_list(v);
    if (list.size() != 4) {
        throw ConfigError("expected 4 comma-separated integers, got '" + v + "'");
    }
    return {list[0], list[1], list[2], list[3]};
}

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table{
        {"train.base_lr", [](RunConfig& c, const std::string& v) { c.train.base_lr = to_double(v); }},
        {"train.warmup_iters", [](RunConfig& c, const std::string& v) { c.train.warmup_iters = to_int(v); }},
        {"train.milestones", [](RunConfig& c, const std::string& v) { c.train.milestones = to_int_list(v); }},
        {"train.total_epochs", [](RunConfig& c, const std::string& v) { c.train.total_epochs = to_int(v); }},
        {"train.batch_size", [](RunConfig& c, const std::string& v) { c.train.batch_size = to_int(v); }},
        {"train.lr_decay", [](RunConfig& c, const std::string& v) { c.train.lr_decay = to_double(v); }},
        {"train.beta1", [](RunConfig& c, const std::string& v) { c.train.beta1 = to_double(v); }},
        {"train.beta2", [](RunConfig& c, const std::string& v) { c.train.beta2 = to_double(v); }},
        {"train.eps", [](RunConfig& c, const std::string& v) { c.train.eps = to_double(v); }},
        {"train.seed", [](RunConfig& c, const std::string& v) { c.train.seed = static_cast<std::uint64_t>(to_int(v)); }},
        {"data.height", [](RunConfig& c, const std::string& v) { c.data.scene.height = to_int(v); }},
        {"data.width", [](RunConfig& c, const std::string& v) { c.data.scene.width = to_int(v); }},
        {"data.scale_min", [](RunConfig& c, const std::string& v) { c.data.scene.scale_min = to_double(v); }},
        {"data.scale_max", [](RunConfig& c, const std::string& v) { c.data.scene.scale_max = to_double(v); }},
        {"data.rotation_deg", [](RunConfig& c, const std::string& v) { c.data.scene.rotation_deg = to_double(v); }},
        {"data.noise", [](RunConfig& c, const std::string& v) { c.data.scene.noise = to_double(v); }},
        {"data.seed", [](RunConfig& c, const std::string& v) { c.data.scene.seed = static_cast<std::uint64_t>(to_int(v)); }},
        {"data.train_size", [](RunConfig& c, const std::string& v) { c.data.train_size = to_int(v); }},
        {"data.eval_size", [](RunConfig& c, const std::string& v) { c.data.eval_size = to_int(v); }},
        {"model.embed_dim", [](RunConfig& c, const std::string& v) { c.model.embed_dim = to_int(v); }},
        {"model.depth", [](RunConfig& c, const std::string& v) { c.model.depth = to_int(v); }},
        {"model.heads", [](RunConfig& c, const std::string& v) { c.model.heads = to_int(v); }},
        {"model.mlp_ratio", [](RunConfig& c, const std::string& v) { c.model.mlp_ratio = to_double(v); }},
        {"model.head_width", [](RunConfig& c, const std::string& v) { c.model.head_width = to_int(v); }},
        {"stem.variant", [](RunConfig& c, const std::string& v) { c.model.stem.variant = stem::parse_variant(v); }},
        {"stem.fpn_width", [](RunConfig& c, const std::string& v) { c.model.stem.fpn_width = to_int(v); }},
        {"stem.kagn_degree", [](RunConfig& c, const std::string& v) { c.model.stem.kagn_degree = static_cast<int>(to_int(v)); }},
        {"stem.kagn_bottleneck", [](RunConfig& c, const std::string& v) { c.model.stem.kagn_bottleneck = to_int(v); }},
        {"stem.cbam_reduction", [](RunConfig& c, const std::string& v) { c.model.stem.cbam_reduction = to_int(v); }},
        {"stem.cbam_kernel", [](RunConfig& c, const std::string& v) { c.model.stem.cbam_kernel = to_int(v); }},
        {"stem.cnn_stem_width", [](RunConfig& c, const std::string& v) { c.model.stem.cnn_stem_width = to_int(v); }},
        {"stem.backbone_widths", [](RunConfig& c, const std::string& v) { c.model.stem.backbone.widths = to_int4(v); }},
        {"stem.backbone_blocks", [](RunConfig& c, const std::string& v) { c.model.stem.backbone.blocks = to_int4(v); }},
        {"stem.fpn_bias", [](RunConfig& c, const std::string& v) { c.model.stem.fpn_bias = to_bool(v); }},
        {"stem.fpn_norm", [](RunConfig& c, const std::string& v) { c.model.stem.fpn_norm = to_bool(v); }},
        {"run.out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
        {"run.eval_every", [](RunConfig& c, const std::string& v) { c.eval_every = to_int(v); }},
        {"run.max_steps", [](RunConfig& c, const std::string& v) { c.max_steps = to_int(v); }},
        {"run.overfit_samples", [](RunConfig& c, const std::string& v) { c.overfit_samples = to_int(v); }},
        {"run.dtype", [](RunConfig& c, const std::string& v) {
             if (v == "f32") {
                 c.dtype = DType::f32;
             } else if (v == "f64") {
                 c.dtype = DType::f64;
             } else {
                 throw ConfigError("run.dtype must be f32 or f64, got '" + v + "'");
             }
         }},
    };
    return table;
}

} // namespace

void apply(RunConfig& cfg, const std::string& key, const std::string& value) {
    const auto& table = setters();
    auto it = table.find(key);
    if (it == table.end()) {
        throw ConfigError("unknown config key '" + key + "'");
    }
    try {
        it->second(cfg, value);
    } catch (const ConfigError& e) {
        throw ConfigError(key + ": " + e.what());
    } catch (const InvalidSpec& e) {
        throw ConfigError(key + ": " + e.what());
    }
}

RunConfig parse(std::istream& in, RunConfig base) {
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        try {
            apply(base, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return base;
}

RunConfig load(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config file " + path.string());
    }
    return parse(in, std::move(base));
}

const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& [name, _] : setters()) {
            k.push_back(name);
        }
        return k;
    }();
    return keys;
}

} // namespace kanfpn::config
