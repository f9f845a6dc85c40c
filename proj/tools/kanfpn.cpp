// kanfpn command-line tool: gradient checks, training, ablations, evaluation
// and dataset export.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "kanfpn/config.hpp"
#include "kanfpn/error.hpp"
#include "kanfpn/gradcheck.hpp"
#include "kanfpn/train.hpp"

using namespace kanfpn;

namespace {

train::RunConfig load_config(const std::string& path) {
    return path.empty() ? train::RunConfig{} : config::load(path);
}

std::vector<stem::StemVariant> parse_stages(const std::string& list) {
    std::vector<stem::StemVariant> out;
    std::stringstream ss(list);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(stem::parse_variant(item));
        }
    }
    return out;
}

int cmd_gradcheck(const std::string& scope, std::uint64_t seed, bool list, double step) {
    if (list) {
        for (const auto& s : gradcheck::scopes()) {
            std::printf("%-24s %-6s tol=%.0e\n", s.name.c_str(), s.kind.c_str(), s.tolerance);
        }
        return 0;
    }
    gradcheck::Options opts;
    opts.h = step;
    const auto report = gradcheck::run(scope, seed, opts);
    std::printf("scope %s seed %llu\n", report.scope.c_str(), static_cast<unsigned long long>(seed));
    for (const auto& g : report.groups) {
        std::printf("  %-40s n=%-4lld refined=%-3lld max_rel_err=%.3e\n", g.name.c_str(),
                    static_cast<long long>(g.checked), static_cast<long long>(g.refined), g.max_rel_err);
    }
    std::printf("%s max_rel_err=%.3e tol=%.0e\n", report.passed() ? "PASS" : "FAIL",
                report.max_rel_err, report.tolerance);
    return report.passed() ? 0 : 1;
}

int cmd_train(const std::string& stage, const std::string& cfg_path, bool overfit, bool smoke) {
    auto cfg = load_config(cfg_path);
    if (smoke) {
        cfg = train::smoke_config(cfg);
    }
    if (overfit) {
        cfg = train::overfit_config(cfg);
    }
    const auto v = stem::parse_variant(stage);
    const auto res = train::run_stage(v, cfg);
    for (const auto& r : res.records) {
        std::printf("%s epoch %lld loss %.6f pck@0.05 %.4f pck@0.1 %.4f (%.1fs)\n", r.stage.c_str(),
                    static_cast<long long>(r.epoch), r.loss, r.pck05, r.pck10, r.seconds);
    }
    std::printf("steps %lld, metrics %s, checkpoint %s\n", static_cast<long long>(res.steps),
                res.metrics.string().c_str(), res.checkpoint.string().c_str());
    return 0;
}

int cmd_ablate(const std::string& stages, const std::string& cfg_path, int jobs, bool smoke) {
    auto cfg = load_config(cfg_path);
    if (smoke) {
        cfg = train::smoke_config(cfg);
    }
    const auto rows = train::run_ablation(parse_stages(stages), cfg, jobs);
    int failures = 0;
    std::printf("%-5s %-28s %8s %8s %8s %10s  %s\n", "stage", "label", "paper_ap", "pck05", "pck10",
                "params", "status");
    for (const auto& r : rows) {
        std::printf("%-5s %-28s %8.1f %8.4f %8.4f %10lld  %s\n", r.stage.c_str(), r.label.c_str(),
                    r.paper_ap, r.pck05, r.pck10, static_cast<long long>(r.params), r.status.c_str());
        failures += r.status == "ok" ? 0 : 1;
    }
    return failures == 0 ? 0 : 1;
}

int cmd_eval(const std::string& ckpt, const std::string& stage, const std::string& cfg_path,
             const std::string& predictions) {
    const auto cfg = load_config(cfg_path);
    const auto v = stem::parse_variant(stage);
    pose::PoseModel model(cfg.model_for(v), cfg.train.seed, cfg.dtype);
    nn::load_checkpoint(ckpt, model.params());
    const std::int64_t n_train = cfg.data.train_size;
    const synth::Dataset data(cfg.data.scene, n_train + cfg.data.eval_size);
    const auto positions = synth::split(data.size(), cfg.data.eval_size).eval;
    const auto ev = train::evaluate(model, data, positions, cfg.train.batch_size);
    std::printf("%s pck@0.05 %.4f pck@0.1 %.4f over %zu samples\n", stage.c_str(), ev.pck05, ev.pck10,
                positions.size());
    if (!predictions.empty()) {
        std::ofstream out(predictions);
        if (!out) {
            throw FormatError("cannot write " + predictions);
        }
        pose::write_predictions_csv(out, ev.predictions, positions.front());
    }
    return 0;
}

int cmd_export(const std::string& cfg_path, const std::string& out_dir) {
    const auto cfg = load_config(cfg_path);
    const auto sp = synth::split(cfg.data.train_size + cfg.data.eval_size, cfg.data.eval_size);
    synth::export_samples(cfg.data.scene, out_dir, "train", sp.train);
    synth::export_samples(cfg.data.scene, out_dir, "eval", sp.eval);
    std::printf("exported %zu train and %zu eval samples to %s\n", sp.train.size(), sp.eval.size(),
                out_dir.c_str());
    std::printf("eval fingerprint %016llx\n",
                static_cast<unsigned long long>(synth::fingerprint(cfg.data.scene, sp.eval)));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Pose estimation front-end ablation harness"};
    app.require_subcommand(1);

    std::string scope;
    std::uint64_t seed = 0;
    bool list = false;
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient check of a named scope");
    gc->add_option("--scope", scope, "Op, layer or stage name (see --list)");
    gc->add_option("--seed", seed, "Random seed");
    gc->add_flag("--list", list, "List available scopes");
    double step = gradcheck::Options{}.h;
    gc->add_option("--step", step, "Central-difference step");

    std::string stage;
    std::string cfg_path;
    bool overfit = false;
    bool smoke = false;
    auto* tr = app.add_subcommand("train", "Train one stage");
    tr->add_option("--stage", stage, "s0..s6")->required();
    tr->add_option("--config", cfg_path, "Config file (key = value)");
    tr->add_flag("--overfit", overfit, "Train and evaluate on a fixed 16-sample set");
    tr->add_flag("--smoke", smoke, "One epoch over 8 samples");

    std::string stages = "s0,s1,s2,s3,s4,s5,s6";
    int jobs = 1;
    auto* ab = app.add_subcommand("ablate", "Train several stages and write runs/ablation.csv");
    ab->add_option("--stages", stages, "Comma-separated stage list");
    ab->add_option("--config", cfg_path, "Config file (key = value)");
    ab->add_option("--jobs", jobs, "Stages trained in parallel");
    ab->add_flag("--smoke", smoke, "One epoch over 8 samples per stage");

    std::string ckpt;
    std::string predictions;
    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the eval split");
    ev->add_option("--ckpt", ckpt, "Checkpoint file")->required();
    ev->add_option("--stage", stage, "s0..s6")->required();
    ev->add_option("--config", cfg_path, "Config file used for training");
    ev->add_option("--predictions", predictions, "Write sample_id,k,x,y,score CSV here");

    std::string out_dir = "data";
    auto* ex = app.add_subcommand("export-data", "Write the synthetic train/eval splits to disk");
    ex->add_option("--config", cfg_path, "Config file (key = value)");
    ex->add_option("--out", out_dir, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gc) {
            if (!list && scope.empty()) {
                std::cerr << "gradcheck: --scope or --list is required\n";
                return 2;
            }
            return cmd_gradcheck(scope, seed, list, step);
        }
        if (*tr) {
            return cmd_train(stage, cfg_path, overfit, smoke);
        }
        if (*ab) {
            return cmd_ablate(stages, cfg_path, jobs, smoke);
        }
        if (*ev) {
            return cmd_eval(ckpt, stage, cfg_path, predictions);
        }
        if (*ex) {
            return cmd_export(cfg_path, out_dir);
        }
    } catch (const kanfpn::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
