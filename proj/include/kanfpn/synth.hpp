#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "kanfpn/pose.hpp"
#include "kanfpn/tensor.hpp"

namespace kanfpn::synth {

inline constexpr std::int64_t kNumKeypoints = 8;

/// head, neck, l_elbow, r_elbow, l_wrist, r_wrist, l_ankle, r_ankle.
const std::array<const char*, kNumKeypoints>& keypoint_names();

struct SceneSpec {
    std::int64_t height = 64;
    std::int64_t width = 64;
    /// Head-to-ankle extent as a fraction of the image height.
    double scale_min = 0.2;
    double scale_max = 0.9;
    double rotation_deg = 30.0;
    double noise = 0.05;
    /// Place the figure at the image centre instead of a random offset.
    bool centered = false;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Sample {
    Tensor image;  // [3,H,W] f32, values in [0,1]
    pose::Keypoints keypoints;
    double scale = 0.0;     // fraction of image height
    double rotation = 0.0;  // radians
};

/// Joint positions of the unit figure, centred at the origin with y pointing
/// down: the 8 keypoints followed by the hip, which is drawn but not labelled.
const std::vector<std::array<double, 2>>& canonical_skeleton();

/// centre + scale * height * R(rotation) * joint for every canonical joint.
std::vector<std::array<double, 2>> place_skeleton(double scale, double rotation, double cx,
                                                  double cy, double image_height);

/// Fully determined by (spec.seed, index). Throws PlacementFailure when 100
/// attempts fail to keep the figure inside the image.
Sample generate(const SceneSpec& spec, std::int64_t index);

struct Split {
    std::vector<std::int64_t> train;
    std::vector<std::int64_t> eval;
};

/// Contiguous disjoint ranges: the last `n_eval` indices of [0,n) are held out.
Split split(std::int64_t n, std::int64_t n_eval);

/// Lazily generated samples generate(spec, offset + i) for i in [0, size).
class Dataset {
public:
    Dataset(SceneSpec spec, std::int64_t size, std::int64_t offset = 0);

    std::int64_t size() const { return size_; }
    const SceneSpec& spec() const { return spec_; }
    Sample at(std::int64_t i) const;

    struct Batch {
        Tensor images;  // [B,3,H,W]
        std::vector<pose::Keypoints> keypoints;
    };
    Batch batch(const std::vector<std::int64_t>& positions, DType dtype = DType::f32) const;

private:
    SceneSpec spec_;
    std::int64_t size_;
    std::int64_t offset_;
};

/// FNV-1a over the raw image bytes and keypoint coordinates of the given samples.
std::uint64_t fingerprint(const SceneSpec& spec, const std::vector<std::int64_t>& indices);

/// Writes {root}/{split}/{index}.tnsr and {index}.csv (k,name,x,y,visible).
void export_samples(const SceneSpec& spec, const std::filesystem::path& root,
                    const std::string& split_name, const std::vector<std::int64_t>& indices);

} // namespace kanfpn::synth
