#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "kanfpn/pose.hpp"
#include "kanfpn/stem.hpp"
#include "kanfpn/synth.hpp"

namespace kanfpn::train {

struct TrainConfig {
    double base_lr = 1e-4;
    std::int64_t warmup_iters = 500;
    std::vector<std::int64_t> milestones{34, 40};
    std::int64_t total_epochs = 42;
    std::int64_t batch_size = 8;
    double lr_decay = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Linear warmup from 0 over warmup_iters steps, then
/// base_lr * lr_decay^(number of milestones <= epoch).
double lr_at(std::int64_t step, std::int64_t epoch, const TrainConfig& cfg);

/// Adam with bias correction; moments are kept in double precision.
class Adam {
public:
    Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    /// Applies one update to every trainable parameter with a gradient in `grads`.
    void step(nn::ParamStore& params, const std::unordered_map<std::string, Tensor>& grads, double lr);
    std::int64_t steps() const { return t_; }

private:
    double beta1_;
    double beta2_;
    double eps_;
    std::int64_t t_ = 0;
    std::unordered_map<std::string, std::vector<double>> m_;
    std::unordered_map<std::string, std::vector<double>> v_;
};

struct StepResult {
    double loss = 0.0;
    double lr = 0.0;
};

/// Forward, masked MSE against rendered targets, backward and one Adam update
/// at lr_at(optimizer step, epoch). Throws NonFiniteLoss on NaN/inf.
StepResult train_step(pose::PoseModel& model, const synth::Dataset::Batch& batch, Adam& opt,
                      const TrainConfig& cfg, std::int64_t epoch);

struct EvalResult {
    double pck05 = 0.0;
    double pck10 = 0.0;
    std::vector<pose::Keypoints> predictions;
};

EvalResult evaluate(const pose::PoseModel& model, const synth::Dataset& data,
                    const std::vector<std::int64_t>& positions, std::int64_t batch_size);

struct DataConfig {
    synth::SceneSpec scene;
    std::int64_t train_size = 256;
    std::int64_t eval_size = 64;
};

struct RunConfig {
    TrainConfig train;
    DataConfig data;
    /// Encoder/head geometry and stem knobs; the variant and input extent are
    /// filled in per stage.
    pose::PoseModelConfig model;
    std::filesystem::path out_dir = "runs";
    std::int64_t eval_every = 1;
    /// Hard cap on optimizer steps (0 = none).
    std::int64_t max_steps = 0;
    /// Train and evaluate on the first `overfit_samples` training samples.
    bool overfit = false;
    std::int64_t overfit_samples = 16;
    DType dtype = DType::f32;

    pose::PoseModelConfig model_for(stem::StemVariant v) const;
    /// Checks the stem settings of the configured `stem.variant`.
    void validate() const;
    /// Same checks, with the stem settings taken as variant `v`.
    void validate_for(stem::StemVariant v) const;
};

/// Overrides for `train --smoke`: 1 epoch over 8 samples.
RunConfig smoke_config(RunConfig cfg);
/// Overrides for `train --overfit`: a fixed 16-sample set used for both
/// training and evaluation.
RunConfig overfit_config(RunConfig cfg);

struct RunRecord {
    std::string stage;
    std::int64_t epoch = 0;
    double loss = 0.0;
    double pck05 = 0.0;
    double pck10 = 0.0;
    std::int64_t params = 0;
    double seconds = 0.0;
};

struct StageResult {
    std::vector<RunRecord> records;
    std::filesystem::path metrics;
    std::filesystem::path checkpoint;
    std::int64_t steps = 0;
};

inline constexpr const char* kMetricsHeader = "stage,epoch,loss,pck05,pck10,params,seconds";

/// Trains one stage, writing {out_dir}/{stage}/metrics.csv (flushed per row)
/// and {out_dir}/{stage}/final.ckpt.
StageResult run_stage(stem::StemVariant variant, const RunConfig& cfg);

/// Reference AP of each ablation row; fixed metadata.
double paper_ap(stem::StemVariant v);

struct AblationRecord {
    std::string stage;
    std::string label;
    double paper_ap = 0.0;
    double pck05 = 0.0;
    double pck10 = 0.0;
    std::int64_t params = 0;
    std::string status;  // "ok" or the error message
};

/// Runs every stage (up to `jobs` in parallel); a failing stage is reported in
/// its row and does not stop the others. Writes {out_dir}/ablation.csv.
std::vector<AblationRecord> run_ablation(const std::vector<stem::StemVariant>& stages,
                                         const RunConfig& cfg, int jobs = 1);

} // namespace kanfpn::train
