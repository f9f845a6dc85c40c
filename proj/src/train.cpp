#include "kanfpn/train.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

#include "kanfpn/rng.hpp"

namespace kanfpn::train {

void TrainConfig::validate() const {
    if (!(base_lr >= 0.0) || warmup_iters < 0 || total_epochs < 1 || batch_size < 1) {
        throw InvalidSpec("train config needs base_lr >= 0, warmup_iters >= 0, total_epochs >= 1 "
                          "and batch_size >= 1");
    }
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (milestones[i] >= total_epochs || (i > 0 && milestones[i] <= milestones[i - 1])) {
            throw InvalidSpec("milestones must be strictly increasing and below total_epochs");
        }
    }
    if (!(lr_decay > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(eps > 0.0)) {
        throw InvalidSpec("invalid optimizer constants");
    }
}

double lr_at(std::int64_t step, std::int64_t epoch, const TrainConfig& cfg) {
    double lr = cfg.base_lr;
    for (auto m : cfg.milestones) {
        if (epoch >= m) {
            lr *= cfg.lr_decay;
        }
    }
    if (step < cfg.warmup_iters) {
        lr *= static_cast<double>(step) / static_cast<double>(cfg.warmup_iters);
    }
    return lr;
}

Adam::Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(nn::ParamStore& params, const std::unordered_map<std::string, Tensor>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& p : params.params()) {
        if (!p.trainable) {
            continue;
        }
        auto it = grads.find(p.name);
        if (it == grads.end()) {
            continue;
        }
        const auto g = it->second.to_vector();
        auto& m = m_[p.name];
        auto& v = v_[p.name];
        m.resize(g.size(), 0.0);
        v.resize(g.size(), 0.0);
        auto value = p.value.to_vector();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
            value[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
        }
        params.set(p.name, Tensor::from_vector(value, p.value.shape(), p.value.dtype()));
    }
}

StepResult train_step(pose::PoseModel& model, const synth::Dataset::Batch& batch, Adam& opt,
                      const TrainConfig& cfg, std::int64_t epoch) {
    const auto& mc = model.config();
    const DType dt = model.params().params().front().value.dtype();
    const auto target = pose::render_targets(batch.keypoints, mc.heatmap_h(), mc.heatmap_w(),
                                             static_cast<double>(mc.heatmap_stride), 2.0, dt);
    const auto mask = pose::visibility_mask(batch.keypoints, dt);
    const auto images = batch.images.to(dt);

    std::unordered_map<std::string, Tensor> grads;
    double loss_value = 0.0;
    {
        Tape tape;
        const auto bound = model.params().bind(tape);
        const auto loss = pose::mse_loss(model.forward(bound, images), target, mask);
        loss_value = loss.item();
        if (!std::isfinite(loss_value)) {
            throw NonFiniteLoss("loss became " + std::to_string(loss_value) + " at optimizer step " +
                                std::to_string(opt.steps()) + ", epoch " + std::to_string(epoch));
        }
        const auto g = tape.backward(loss);
        for (const auto& p : model.params().params()) {
            if (p.trainable) {
                grads.emplace(p.name, g.of(bound.at(p.name)));
            }
        }
    }
    const double lr = lr_at(opt.steps(), epoch, cfg);
    opt.step(model.params(), grads, lr);
    return {loss_value, lr};
}

EvalResult evaluate(const pose::PoseModel& model, const synth::Dataset& data,
                    const std::vector<std::int64_t>& positions, std::int64_t batch_size) {
    NoGradGuard no_grad;
    const auto& mc = model.config();
    const DType dt = model.params().params().front().value.dtype();
    pose::PckCounts c05;
    pose::PckCounts c10;
    EvalResult out;
    for (std::size_t start = 0; start < positions.size(); start += static_cast<std::size_t>(batch_size)) {
        const auto stop = std::min(positions.size(), start + static_cast<std::size_t>(batch_size));
        const std::vector<std::int64_t> chunk(positions.begin() + static_cast<std::ptrdiff_t>(start),
                                              positions.begin() + static_cast<std::ptrdiff_t>(stop));
        const auto batch = data.batch(chunk, dt);
        const auto pred = pose::decode_keypoints(model.forward(batch.images),
                                                 static_cast<double>(mc.heatmap_stride));
        const auto h = static_cast<double>(mc.height);
        const auto w = static_cast<double>(mc.width);
        c05 += pose::pck_counts(pred, batch.keypoints, 0.05, h, w);
        c10 += pose::pck_counts(pred, batch.keypoints, 0.10, h, w);
        out.predictions.insert(out.predictions.end(), pred.begin(), pred.end());
    }
    out.pck05 = c05.fraction();
    out.pck10 = c10.fraction();
    return out;
}

pose::PoseModelConfig RunConfig::model_for(stem::StemVariant v) const {
    auto m = model;
    m.stem.variant = v;
    m.height = data.scene.height;
    m.width = data.scene.width;
    m.num_keypoints = synth::kNumKeypoints;
    return m;
}

void RunConfig::validate() const { validate_for(model.stem.variant); }

void RunConfig::validate_for(stem::StemVariant v) const {
    train.validate();
    data.scene.validate();
    if (data.train_size < 1 || data.eval_size < 1) {
        throw InvalidSpec("data.train_size and data.eval_size must be >= 1");
    }
    if (eval_every < 1 || max_steps < 0 || overfit_samples < 1) {
        throw InvalidSpec("run.eval_every and run.overfit_samples must be >= 1, run.max_steps >= 0");
    }
    model_for(v).validate();
}

RunConfig smoke_config(RunConfig cfg) {
    cfg.train.total_epochs = 1;
    cfg.train.milestones.clear();
    cfg.data.train_size = 8;
    cfg.data.eval_size = 8;
    cfg.eval_every = 1;
    return cfg;
}

RunConfig overfit_config(RunConfig cfg) {
    cfg.overfit = true;
    return cfg;
}

namespace {

std::string format_row(const RunRecord& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%lld,%.9g,%.6f,%.6f,%lld,%.3f", r.stage.c_str(),
                  static_cast<long long>(r.epoch), r.loss, r.pck05, r.pck10,
                  static_cast<long long>(r.params), r.seconds);
    return buf;
}

std::vector<std::int64_t> shuffled(std::vector<std::int64_t> v, std::uint64_t seed, std::int64_t epoch) {
    SplitMix64 rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng.below(i)]);
    }
    return v;
}

} // namespace

StageResult run_stage(stem::StemVariant variant, const RunConfig& cfg) {
    cfg.validate_for(variant);
    const std::string stage(stem::variant_key(variant));
    const auto dir = cfg.out_dir / stage;
    std::filesystem::create_directories(dir);

    StageResult result;
    result.metrics = dir / "metrics.csv";
    result.checkpoint = dir / "final.ckpt";
    std::ofstream csv(result.metrics, std::ios::trunc);
    if (!csv) {
        throw FormatError("cannot write " + result.metrics.string());
    }
    csv << kMetricsHeader << '\n' << std::flush;

    const auto start = std::chrono::steady_clock::now();
    pose::PoseModel model(cfg.model_for(variant), cfg.train.seed, cfg.dtype);
    const auto params = model.param_count();

    // Training and evaluation draw from disjoint index ranges of one generator.
    std::vector<std::int64_t> train_pos;
    std::vector<std::int64_t> eval_pos;
    const std::int64_t n_train = cfg.overfit ? cfg.overfit_samples : cfg.data.train_size;
    const synth::Dataset data(cfg.data.scene, n_train + (cfg.overfit ? 0 : cfg.data.eval_size));
    for (std::int64_t i = 0; i < n_train; ++i) {
        train_pos.push_back(i);
    }
    if (cfg.overfit) {
        eval_pos = train_pos;
    } else {
        eval_pos = synth::split(data.size(), cfg.data.eval_size).eval;
    }

    Adam opt(cfg.train.beta1, cfg.train.beta2, cfg.train.eps);
    const auto bs = static_cast<std::size_t>(cfg.train.batch_size);
    bool stop = false;
    for (std::int64_t epoch = 0; epoch < cfg.train.total_epochs && !stop; ++epoch) {
        const auto order = shuffled(train_pos, cfg.train.seed, epoch);
        double loss_sum = 0.0;
        std::int64_t batches = 0;
        for (std::size_t s = 0; s < order.size(); s += bs) {
            const std::vector<std::int64_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(s),
                                                  order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), s + bs)));
            loss_sum += train_step(model, data.batch(chunk, cfg.dtype), opt, cfg.train, epoch).loss;
            ++batches;
            if (cfg.max_steps > 0 && opt.steps() >= cfg.max_steps) {
                stop = true;
                break;
            }
        }
        const bool last = stop || epoch + 1 == cfg.train.total_epochs;
        if ((epoch + 1) % cfg.eval_every != 0 && !last) {
            continue;
        }
        const auto ev = evaluate(model, data, eval_pos, cfg.train.batch_size);
        RunRecord rec;
        rec.stage = stage;
        rec.epoch = epoch + 1;
        rec.loss = loss_sum / static_cast<double>(std::max<std::int64_t>(batches, 1));
        rec.pck05 = ev.pck05;
        rec.pck10 = ev.pck10;
        rec.params = params;
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        csv << format_row(rec) << '\n' << std::flush;
        result.records.push_back(rec);
    }
    result.steps = opt.steps();
    nn::save_checkpoint(result.checkpoint, model.params());
    return result;
}

double paper_ap(stem::StemVariant v) {
    switch (v) {
    case stem::StemVariant::S0_Baseline: return 72.5;
    case stem::StemVariant::S1_CnnStem: return 73.3;
    case stem::StemVariant::S2_FpnStem: return 74.0;
    case stem::StemVariant::S3_BackboneCbam: return 74.1;
    case stem::StemVariant::S4_Ours: return 74.5;
    case stem::StemVariant::S5_LateralCbam: return 73.8;
    case stem::StemVariant::S6_KagnFuse: return 74.3;
    }
    return 0.0;
}

std::vector<AblationRecord> run_ablation(const std::vector<stem::StemVariant>& stages,
                                         const RunConfig& cfg, int jobs) {
    if (stages.empty()) {
        throw InvalidSpec("ablation needs at least one stage");
    }
    std::vector<AblationRecord> rows(stages.size());
    auto run_one = [&](std::size_t i) {
        const auto v = stages[i];
        auto& row = rows[i];
        row.stage = std::string(stem::variant_key(v));
        row.label = std::string(stem::variant_label(v));
        row.paper_ap = paper_ap(v);
        try {
            const auto res = run_stage(v, cfg);
            if (!res.records.empty()) {
                row.pck05 = res.records.back().pck05;
                row.pck10 = res.records.back().pck10;
                row.params = res.records.back().params;
            }
            row.status = "ok";
        } catch (const std::exception& e) {
            row.status = e.what();
        }
    };
    const std::size_t workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), 1, stages.size());
    if (workers == 1) {
        for (std::size_t i = 0; i < stages.size(); ++i) {
            run_one(i);
        }
    } else {
        std::mutex mu;
        std::size_t next = 0;
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (;;) {
                    std::size_t i = 0;
                    {
                        std::lock_guard<std::mutex> lock(mu);
                        if (next >= stages.size()) {
                            return;
                        }
                        i = next++;
                    }
                    run_one(i);
                }
            });
        }
        for (auto& t : pool) {
            t.join();
        }
    }

    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream csv(cfg.out_dir / "ablation.csv", std::ios::trunc);
    csv << "stage,label,paper_ap,pck05,pck10,params,status\n";
    for (const auto& r : rows) {
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        char buf[128];
        std::snprintf(buf, sizeof buf, "%.1f,%.6f,%.6f,%lld", r.paper_ap, r.pck05, r.pck10,
                      static_cast<long long>(r.params));
        csv << r.stage << ',' << r.label << ',' << buf << ',' << status << '\n';
    }
    return rows;
}

} // namespace kanfpn::train
