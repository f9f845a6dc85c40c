#include "kanfpn/pose.hpp"

#include <cmath>
#include <ostream>

#include "kanfpn/ops.hpp"

namespace kanfpn::pose {

stem::StemConfig PoseModelConfig::stem_config() const {
    auto s = stem;
    s.embed_dim = embed_dim;
    s.height = height;
    s.width = width;
    return s;
}

void PoseModelConfig::validate() const {
    if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0) {
        throw InvalidSpec("embed_dim must be a positive multiple of heads");
    }
    if (depth < 0 || num_keypoints < 1 || head_width < 1 || mlp_ratio <= 0.0) {
        throw InvalidSpec("invalid encoder or head geometry");
    }
    // Stem stride 16 followed by two 2x deconvolutions.
    if (heatmap_stride != 4) {
        throw InvalidSpec("heatmap stride is fixed at 4 by the head, got " +
                          std::to_string(heatmap_stride));
    }
    stem_config().validate();
}

void init_encoder(const nn::Builder& b, std::int64_t dim, std::int64_t depth, double mlp_ratio) {
    auto eb = b.sub("encoder");
    for (std::int64_t i = 0; i < depth; ++i) {
        nn::init_transformer_block(eb.sub("blocks." + std::to_string(i)), dim, mlp_ratio);
    }
    nn::init_layer_norm(eb.sub("norm"), dim);
}

Tensor encode(const nn::Scope& p, const Tensor& tokens, std::int64_t depth, std::int64_t heads) {
    const auto ep = p.sub("encoder");
    Tensor y = tokens;
    for (std::int64_t i = 0; i < depth; ++i) {
        y = nn::transformer_block(ep.sub("blocks." + std::to_string(i)), y, heads);
    }
    return nn::layer_norm(ep.sub("norm"), y);
}

void init_heatmap_head(const nn::Builder& b, std::int64_t dim, std::int64_t width,
                       std::int64_t keypoints) {
    auto hb = b.sub("head");
    nn::init_deconv_block(hb.sub("deconv1"), dim, width);
    nn::init_deconv_block(hb.sub("deconv2"), width, width);
    nn::init_conv(hb.sub("final"), width, keypoints, 1);
}

Tensor heatmap_head(const nn::Scope& p, const Tensor& feat, std::int64_t grid_h, std::int64_t grid_w) {
    if (feat.ndim() != 3 || feat.dim(1) != grid_h * grid_w) {
        throw ShapeMismatch("heatmap_head: tokens " + to_string(feat.shape()) + " do not form a " +
                            std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
    }
    const auto hp = p.sub("head");
    auto map = ops::reshape(ops::permute(feat, {0, 2, 1}), {feat.dim(0), feat.dim(2), grid_h, grid_w});
    map = nn::deconv_block(hp.sub("deconv1"), map);
    map = nn::deconv_block(hp.sub("deconv2"), map);
    return nn::conv(hp.sub("final"), map);
}

Tensor render_targets(const std::vector<Keypoints>& batch, std::int64_t h, std::int64_t w,
                      double stride, double sigma, DType dtype) {
    if (batch.empty() || h < 1 || w < 1 || stride <= 0.0 || sigma <= 0.0) {
        throw InvalidSpec("render_targets needs a non-empty batch, positive extent, stride and sigma");
    }
    const auto k = static_cast<std::int64_t>(batch.front().size());
    const auto b = static_cast<std::int64_t>(batch.size());
    std::vector<double> out(static_cast<std::size_t>(b * k * h * w), 0.0);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (std::int64_t n = 0; n < b; ++n) {
        const auto& kps = batch[static_cast<std::size_t>(n)];
        if (static_cast<std::int64_t>(kps.size()) != k) {
            throw ShapeMismatch("render_targets: samples disagree on keypoint count");
        }
        for (std::int64_t c = 0; c < k; ++c) {
            const auto& kp = kps[static_cast<std::size_t>(c)];
            if (!kp.visible) {
                continue;
            }
            const double u = kp.x / stride;
            const double v = kp.y / stride;
            double* dst = out.data() + (n * k + c) * h * w;
            for (std::int64_t i = 0; i < h; ++i) {
                const double dy = static_cast<double>(i) - v;
                for (std::int64_t j = 0; j < w; ++j) {
                    const double dx = static_cast<double>(j) - u;
                    dst[i * w + j] = std::exp(-(dx * dx + dy * dy) * inv);
                }
            }
        }
    }
    return Tensor::from_vector(out, {b, k, h, w}, dtype);
}

Tensor visibility_mask(const std::vector<Keypoints>& batch, DType dtype) {
    if (batch.empty()) {
        throw InvalidSpec("visibility_mask needs a non-empty batch");
    }
    const auto k = static_cast<std::int64_t>(batch.front().size());
    std::vector<double> m;
    m.reserve(batch.size() * static_cast<std::size_t>(k));
    for (const auto& kps : batch) {
        for (const auto& kp : kps) {
            m.push_back(kp.visible ? 1.0 : 0.0);
        }
    }
    return Tensor::from_vector(m, {static_cast<std::int64_t>(batch.size()), k}, dtype);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target, const Tensor& mask) {
    return ops::masked_mse(pred, target, mask);
}

std::vector<Keypoints> decode_keypoints(const Tensor& heatmaps, double stride) {
    if (heatmaps.ndim() != 4) {
        throw ShapeMismatch("decode_keypoints expects [B,K,H,W], got " + to_string(heatmaps.shape()));
    }
    const std::int64_t b = heatmaps.dim(0);
    const std::int64_t k = heatmaps.dim(1);
    const std::int64_t h = heatmaps.dim(2);
    const std::int64_t w = heatmaps.dim(3);
    const auto hm = heatmaps.to_vector();
    std::vector<Keypoints> out(static_cast<std::size_t>(b), Keypoints(static_cast<std::size_t>(k)));
    for (std::int64_t n = 0; n < b; ++n) {
        for (std::int64_t c = 0; c < k; ++c) {
            const double* m = hm.data() + (n * k + c) * h * w;
            std::int64_t best = 0;
            for (std::int64_t q = 1; q < h * w; ++q) {
                if (m[q] > m[best]) {
                    best = q;
                }
            }
            const std::int64_t i = best / w;
            const std::int64_t j = best % w;
            double x = static_cast<double>(j);
            double y = static_cast<double>(i);
            if (j > 0 && j < w - 1) {
                const double d = m[i * w + j + 1] - m[i * w + j - 1];
                x += d > 0.0 ? 0.25 : (d < 0.0 ? -0.25 : 0.0);
            }
            if (i > 0 && i < h - 1) {
                const double d = m[(i + 1) * w + j] - m[(i - 1) * w + j];
                y += d > 0.0 ? 0.25 : (d < 0.0 ? -0.25 : 0.0);
            }
            auto& kp = out[static_cast<std::size_t>(n)][static_cast<std::size_t>(c)];
            kp.x = x * stride;
            kp.y = y * stride;
            kp.visible = true;
            kp.score = m[best];
        }
    }
    return out;
}

PckCounts pck_counts(const std::vector<Keypoints>& pred, const std::vector<Keypoints>& gt,
                     double tau, double height, double width) {
    if (pred.size() != gt.size()) {
        throw ShapeMismatch("pck: prediction and ground-truth batch sizes differ");
    }
    if (tau <= 0.0) {
        throw InvalidSpec("pck threshold must be positive");
    }
    const double limit = tau * std::hypot(height, width);
    PckCounts counts;
    for (std::size_t n = 0; n < gt.size(); ++n) {
        if (pred[n].size() != gt[n].size()) {
            throw ShapeMismatch("pck: keypoint counts differ");
        }
        for (std::size_t k = 0; k < gt[n].size(); ++k) {
            if (!gt[n][k].visible) {
                continue;
            }
            ++counts.total;
            const double err = std::hypot(pred[n][k].x - gt[n][k].x, pred[n][k].y - gt[n][k].y);
            if (err <= limit) {
                ++counts.correct;
            }
        }
    }
    return counts;
}

double pck(const std::vector<Keypoints>& pred, const std::vector<Keypoints>& gt, double tau,
           double height, double width) {
    return pck_counts(pred, gt, tau, height, width).fraction();
}

void write_predictions_csv(std::ostream& os, const std::vector<Keypoints>& pred,
                           std::int64_t first_sample_id, bool header) {
    if (header) {
        os << "sample_id,k,x,y,score\n";
    }
    for (std::size_t n = 0; n < pred.size(); ++n) {
        for (std::size_t k = 0; k < pred[n].size(); ++k) {
            const auto& kp = pred[n][k];
            os << first_sample_id + static_cast<std::int64_t>(n) << ',' << k << ',' << kp.x << ','
               << kp.y << ',' << kp.score << '\n';
        }
    }
}

PoseModel::PoseModel(PoseModelConfig cfg, std::uint64_t seed, DType dtype) : cfg_(std::move(cfg)) {
    cfg_.validate();
    nn::Builder root(params_, "", seed, dtype);
    stem::init_stem(root.sub("stem"), cfg_.stem_config());
    init_encoder(root, cfg_.embed_dim, cfg_.depth, cfg_.mlp_ratio);
    init_heatmap_head(root, cfg_.embed_dim, cfg_.head_width, cfg_.num_keypoints);
}

Tensor PoseModel::forward(const nn::ParamMap& params, const Tensor& images) const {
    const nn::Scope root(params, "");
    const auto scfg = cfg_.stem_config();
    auto tokens = stem::stem_forward(root.sub("stem"), images, scfg);
    auto feat = encode(root, tokens, cfg_.depth, cfg_.heads);
    return heatmap_head(root, feat, images.dim(2) / 16, images.dim(3) / 16);
}

Tensor PoseModel::forward(const Tensor& images) const {
    return forward(params_.view(), images);
}

} // namespace kanfpn::pose
