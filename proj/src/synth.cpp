#include "kanfpn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "kanfpn/error.hpp"
#include "kanfpn/rng.hpp"
#include "kanfpn/tnsr_io.hpp"

namespace kanfpn::synth {

namespace {

using Point = std::array<double, 2>;
using Color = std::array<double, 3>;

constexpr std::size_t kHip = 8;
constexpr int kMaxAttempts = 100;

// Limbs between canonical joint indices.
constexpr std::array<std::array<std::size_t, 2>, 8> kLimbs{{
    {0, 1}, {1, 2}, {2, 4}, {1, 3}, {3, 5}, {1, kHip}, {kHip, 6}, {kHip, 7},
}};

constexpr std::array<Color, kNumKeypoints> kJointColors{{
    {1.0, 0.9, 0.2},
    {0.9, 0.9, 0.9},
    {1.0, 0.3, 0.3},
    {0.3, 0.5, 1.0},
    {1.0, 0.6, 0.1},
    {0.2, 0.9, 0.9},
    {0.9, 0.3, 0.9},
    {0.3, 1.0, 0.3},
}};

constexpr Color kLimbColor{0.6, 0.6, 0.6};

struct Canvas {
    std::int64_t h;
    std::int64_t w;
    std::vector<double> px;  // [3,h,w]

    void blend(std::int64_t i, std::int64_t j, const Color& c, double a) {
        for (std::size_t ch = 0; ch < 3; ++ch) {
            double& v = px[static_cast<std::size_t>((static_cast<std::int64_t>(ch) * h + i) * w + j)];
            v = v * (1.0 - a) + c[ch] * a;
        }
    }

    // Coverage falls off linearly over one pixel around the shape boundary.
    template <class Dist>
    void fill(double x0, double y0, double x1, double y1, double radius, const Color& c, Dist dist) {
        const auto i0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(y0 - radius - 1)));
        const auto i1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(y1 + radius + 1)));
        const auto j0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(x0 - radius - 1)));
        const auto j1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(x1 + radius + 1)));
        for (std::int64_t i = i0; i <= i1; ++i) {
            for (std::int64_t j = j0; j <= j1; ++j) {
                const double a = std::clamp(radius + 0.5 - dist(static_cast<double>(j), static_cast<double>(i)), 0.0, 1.0);
                if (a > 0.0) {
                    blend(i, j, c, a);
                }
            }
        }
    }

    void disc(const Point& p, double r, const Color& c) {
        fill(p[0], p[1], p[0], p[1], r, c, [&](double x, double y) { return std::hypot(x - p[0], y - p[1]); });
    }

    void segment(const Point& a, const Point& b, double half_width, const Color& c) {
        const double dx = b[0] - a[0];
        const double dy = b[1] - a[1];
        const double len2 = dx * dx + dy * dy;
        fill(std::min(a[0], b[0]), std::min(a[1], b[1]), std::max(a[0], b[0]), std::max(a[1], b[1]),
             half_width, c, [&](double x, double y) {
                 double t = len2 > 0.0 ? ((x - a[0]) * dx + (y - a[1]) * dy) / len2 : 0.0;
                 t = std::clamp(t, 0.0, 1.0);
                 return std::hypot(x - (a[0] + t * dx), y - (a[1] + t * dy));
             });
    }
};

double head_radius(double figure_px) { return std::max(1.5, 0.08 * figure_px); }

void require_index(std::int64_t index) {
    if (index < 0) {
        throw InvalidSpec("sample index must be non-negative");
    }
}

} // namespace

const std::array<const char*, kNumKeypoints>& keypoint_names() {
    static const std::array<const char*, kNumKeypoints> names{
        "head", "neck", "l_elbow", "r_elbow", "l_wrist", "r_wrist", "l_ankle", "r_ankle",
    };
    return names;
}

const std::vector<std::array<double, 2>>& canonical_skeleton() {
    static const std::vector<Point> joints{
        {0.0, -0.5},    // head
        {0.0, -0.3},    // neck
        {-0.15, -0.12}, // l_elbow
        {0.15, -0.12},  // r_elbow
        {-0.22, 0.06},  // l_wrist
        {0.22, 0.06},   // r_wrist
        {-0.13, 0.5},   // l_ankle
        {0.13, 0.5},    // r_ankle
        {0.0, 0.08},    // hip
    };
    return joints;
}

std::vector<std::array<double, 2>> place_skeleton(double scale, double rotation, double cx,
                                                  double cy, double image_height) {
    const double s = scale * image_height;
    const double c = std::cos(rotation);
    const double n = std::sin(rotation);
    std::vector<Point> out;
    out.reserve(canonical_skeleton().size());
    for (const auto& p : canonical_skeleton()) {
        out.push_back({cx + s * (c * p[0] - n * p[1]), cy + s * (n * p[0] + c * p[1])});
    }
    return out;
}

void SceneSpec::validate() const {
    if (height < 8 || width < 8) {
        throw InvalidSpec("scene extent must be at least 8x8");
    }
    if (!(scale_min > 0.0) || scale_min > scale_max) {
        throw InvalidSpec("scale range must satisfy 0 < scale_min <= scale_max");
    }
    if (rotation_deg < 0.0 || noise < 0.0) {
        throw InvalidSpec("rotation range and noise must be non-negative");
    }
}

Sample generate(const SceneSpec& spec, std::int64_t index) {
    spec.validate();
    require_index(index);
    SplitMix64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
    const double hh = static_cast<double>(spec.height);
    const double ww = static_cast<double>(spec.width);
    const double max_rot = spec.rotation_deg * std::numbers::pi / 180.0;

    std::vector<Point> joints;
    double scale = 0.0;
    double rotation = 0.0;
    bool placed = false;
    for (int attempt = 0; attempt < kMaxAttempts && !placed; ++attempt) {
        scale = rng.uniform(spec.scale_min, spec.scale_max);
        rotation = rng.uniform(-max_rot, max_rot);
        const double margin = head_radius(scale * hh) + 1.0;
        auto rel = place_skeleton(scale, rotation, 0.0, 0.0, hh);
        double lo_x = rel[0][0], hi_x = rel[0][0], lo_y = rel[0][1], hi_y = rel[0][1];
        for (const auto& p : rel) {
            lo_x = std::min(lo_x, p[0]);
            hi_x = std::max(hi_x, p[0]);
            lo_y = std::min(lo_y, p[1]);
            hi_y = std::max(hi_y, p[1]);
        }
        const double cx_lo = margin - lo_x;
        const double cx_hi = ww - 1.0 - margin - hi_x;
        const double cy_lo = margin - lo_y;
        const double cy_hi = hh - 1.0 - margin - hi_y;
        if (cx_lo > cx_hi || cy_lo > cy_hi) {
            continue;
        }
        double cx = (ww - 1.0) / 2.0;
        double cy = (hh - 1.0) / 2.0;
        if (spec.centered) {
            if (cx < cx_lo || cx > cx_hi || cy < cy_lo || cy > cy_hi) {
                continue;
            }
        } else {
            cx = rng.uniform(cx_lo, cx_hi);
            cy = rng.uniform(cy_lo, cy_hi);
        }
        joints = place_skeleton(scale, rotation, cx, cy, hh);
        placed = true;
    }
    if (!placed) {
        throw PlacementFailure("no valid placement for sample " + std::to_string(index) + " after " +
                               std::to_string(kMaxAttempts) + " attempts");
    }

    Canvas canvas{spec.height, spec.width, {}};
    canvas.px.resize(static_cast<std::size_t>(3 * spec.height * spec.width));
    for (std::size_t ch = 0; ch < 3; ++ch) {
        const double bg = rng.uniform(0.0, 0.25);
        std::fill_n(canvas.px.begin() + static_cast<std::ptrdiff_t>(ch * canvas.px.size() / 3),
                    canvas.px.size() / 3, bg);
    }
    const double figure_px = scale * hh;
    const double limb_half = std::max(0.5, 0.025 * figure_px);
    const double joint_r = std::max(1.0, 0.045 * figure_px);
    for (const auto& limb : kLimbs) {
        canvas.segment(joints[limb[0]], joints[limb[1]], limb_half, kLimbColor);
    }
    for (std::size_t k = kNumKeypoints; k-- > 0;) {
        canvas.disc(joints[k], k == 0 ? head_radius(figure_px) : joint_r, kJointColors[k]);
    }
    std::vector<float> pixels(canvas.px.size());
    for (std::size_t q = 0; q < pixels.size(); ++q) {
        const double v = canvas.px[q] + spec.noise * rng.normal();
        pixels[q] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }

    Sample s;
    s.image = Tensor::from_buffer(std::move(pixels), {3, spec.height, spec.width});
    s.scale = scale;
    s.rotation = rotation;
    s.keypoints.reserve(kNumKeypoints);
    for (std::size_t k = 0; k < kNumKeypoints; ++k) {
        s.keypoints.push_back({joints[k][0], joints[k][1], true, 0.0});
    }
    return s;
}

Split split(std::int64_t n, std::int64_t n_eval) {
    if (n < 1 || n_eval < 0 || n_eval > n) {
        throw InvalidSpec("split needs n >= 1 and 0 <= n_eval <= n");
    }
    Split out;
    for (std::int64_t i = 0; i < n; ++i) {
        (i < n - n_eval ? out.train : out.eval).push_back(i);
    }
    return out;
}

Dataset::Dataset(SceneSpec spec, std::int64_t size, std::int64_t offset)
    : spec_(std::move(spec)), size_(size), offset_(offset) {
    spec_.validate();
    if (size_ < 1 || offset_ < 0) {
        throw InvalidSpec("dataset needs size >= 1 and offset >= 0");
    }
}

Sample Dataset::at(std::int64_t i) const {
    if (i < 0 || i >= size_) {
        throw InvalidSpec("dataset position " + std::to_string(i) + " out of range [0," +
                          std::to_string(size_) + ")");
    }
    return generate(spec_, offset_ + i);
}

Dataset::Batch Dataset::batch(const std::vector<std::int64_t>& positions, DType dtype) const {
    if (positions.empty()) {
        throw InvalidSpec("empty batch");
    }
    const auto b = static_cast<std::int64_t>(positions.size());
    const std::int64_t chw = 3 * spec_.height * spec_.width;
    std::vector<float> images(static_cast<std::size_t>(b * chw));
    Batch out;
    out.keypoints.reserve(positions.size());
    for (std::int64_t n = 0; n < b; ++n) {
        auto s = at(positions[static_cast<std::size_t>(n)]);
        auto px = s.image.data<float>();
        std::copy(px.begin(), px.end(), images.begin() + n * chw);
        out.keypoints.push_back(std::move(s.keypoints));
    }
    out.images = Tensor::from_buffer(std::move(images), {b, 3, spec_.height, spec_.width}).to(dtype);
    return out;
}

std::uint64_t fingerprint(const SceneSpec& spec, const std::vector<std::int64_t>& indices) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, std::size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (auto index : indices) {
        const auto s = generate(spec, index);
        const auto px = s.image.data<float>();
        mix(px.data(), px.size() * sizeof(float));
        for (const auto& kp : s.keypoints) {
            mix(&kp.x, sizeof kp.x);
            mix(&kp.y, sizeof kp.y);
        }
    }
    return h;
}

void export_samples(const SceneSpec& spec, const std::filesystem::path& root,
                    const std::string& split_name, const std::vector<std::int64_t>& indices) {
    const auto dir = root / split_name;
    std::filesystem::create_directories(dir);
    for (auto index : indices) {
        const auto s = generate(spec, index);
        save_tnsr(dir / (std::to_string(index) + ".tnsr"), s.image);
        std::ofstream csv(dir / (std::to_string(index) + ".csv"));
        if (!csv) {
            throw FormatError("cannot write " + (dir / (std::to_string(index) + ".csv")).string());
        }
        csv << "k,name,x,y,visible\n";
        csv.precision(17);
        for (std::size_t k = 0; k < s.keypoints.size(); ++k) {
            const auto& kp = s.keypoints[k];
            csv << k << ',' << keypoint_names()[k] << ',' << kp.x << ',' << kp.y << ','
                << (kp.visible ? 1 : 0) << '\n';
        }
    }
}

} // namespace kanfpn::synth
