#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "kanfpn/nn.hpp"
#include "kanfpn/stem.hpp"

namespace kanfpn::pose {

/// Input-image pixel coordinates.
struct Keypoint {
    double x = 0.0;
    double y = 0.0;
    bool visible = true;
    double score = 0.0;  // peak heatmap value for decoded points
};

using Keypoints = std::vector<Keypoint>;

struct PoseModelConfig {
    std::int64_t embed_dim = 64;
    std::int64_t depth = 4;
    std::int64_t heads = 4;
    double mlp_ratio = 4.0;
    std::int64_t num_keypoints = 8;
    std::int64_t heatmap_stride = 4;
    std::int64_t height = 64;
    std::int64_t width = 64;
    std::int64_t head_width = 64;
    /// Front-end settings; embed_dim and input extent are taken from this struct.
    stem::StemConfig stem;

    stem::StemConfig stem_config() const;
    std::int64_t heatmap_h() const { return height / heatmap_stride; }
    std::int64_t heatmap_w() const { return width / heatmap_stride; }
    void validate() const;
};

void init_encoder(const nn::Builder& b, std::int64_t dim, std::int64_t depth, double mlp_ratio);
/// `depth` transformer blocks followed by a final layer norm.
Tensor encode(const nn::Scope& p, const Tensor& tokens, std::int64_t depth, std::int64_t heads);

void init_heatmap_head(const nn::Builder& b, std::int64_t dim, std::int64_t width,
                       std::int64_t keypoints);
/// Tokens [B,h*w,D] -> heatmaps [B,K,4h,4w]: two deconv blocks and a 1x1 conv.
Tensor heatmap_head(const nn::Scope& p, const Tensor& feat, std::int64_t grid_h, std::int64_t grid_w);

/// Unnormalized Gaussians centred at (x / stride, y / stride) on an h x w grid;
/// invisible keypoints give all-zero channels.
Tensor render_targets(const std::vector<Keypoints>& batch, std::int64_t h, std::int64_t w,
                      double stride, double sigma = 2.0, DType dtype = DType::f32);

/// [B,K] with 1 for visible keypoints.
Tensor visibility_mask(const std::vector<Keypoints>& batch, DType dtype = DType::f32);

/// MSE over visible channels only.
Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask);

/// Argmax per channel (first maximum in row-major order wins), moved a quarter
/// cell toward the larger horizontal / vertical neighbour, scaled by `stride`.
std::vector<Keypoints> decode_keypoints(const Tensor& heatmaps, double stride);

struct PckCounts {
    std::int64_t correct = 0;
    std::int64_t total = 0;

    double fraction() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
    PckCounts& operator+=(const PckCounts& o) {
        correct += o.correct;
        total += o.total;
        return *this;
    }
};

/// Counts visible ground-truth keypoints whose prediction lies within
/// tau * image diagonal.
PckCounts pck_counts(const std::vector<Keypoints>& pred, const std::vector<Keypoints>& gt,
                     double tau, double height, double width);
/// Fraction in [0,1]; 0 when no keypoint is visible.
double pck(const std::vector<Keypoints>& pred, const std::vector<Keypoints>& gt, double tau,
           double height, double width);

/// Writes `sample_id,k,x,y,score` rows (with header when `header`).
void write_predictions_csv(std::ostream& os, const std::vector<Keypoints>& pred,
                           std::int64_t first_sample_id = 0, bool header = true);

/// Stem -> ViT encoder -> heatmap head. Parameters are prefixed "stem.",
/// "encoder." and "head.".
class PoseModel {
public:
    explicit PoseModel(PoseModelConfig cfg, std::uint64_t seed = 0, DType dtype = DType::f32);

    const PoseModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    std::int64_t param_count() const { return params_.scalar_count(); }

    /// images [B,3,H,W] -> heatmaps [B,K,H/4,W/4].
    Tensor forward(const nn::ParamMap& params, const Tensor& images) const;
    Tensor forward(const Tensor& images) const;

private:
    PoseModelConfig cfg_;
    nn::ParamStore params_;
};

} // namespace kanfpn::pose
