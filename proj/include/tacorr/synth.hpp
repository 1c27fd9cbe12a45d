#pragma once

#include "tacorr/pipeline.hpp"

namespace tacorr {

// Joint-angle vector for the articulated prototype (global yaw, head pitch
// and yaw, then swing/swing/bend per limb chain).
struct SynthPose {
    std::vector<double> angles;
};

std::size_t synth_pose_size();
SynthPose zero_pose();
// Each angle uniform within its bound, scaled by amplitude in [0, 1].
SynthPose random_pose(Rng& rng, double amplitude = 1.0);
// base + t * direction, componentwise.
SynthPose pose_add_scaled(const SynthPose& base, const SynthPose& direction, double t);

// Material sample of the prototype surface: capsule torso, a two-sphere head
// and four two-segment limb chains. Point order is stable, so the same sample
// posed twice yields an identity ground-truth map.
struct SynthSample {
    struct MaterialPoint {
        int part;       // internal part id
        Vec3 local;     // offset in the part's rest frame
    };
    std::vector<MaterialPoint> points;
};

SynthSample sample_prototype(std::size_t n_points, Rng& rng);
PointCloud pose_cloud(const SynthSample& sample, const SynthPose& pose);

// One pair: a fresh material sample posed twice; ground truth is identity.
ShapePair synth_pair(std::size_t n_points, Rng& rng);
std::vector<ShapePair> synth_pairs(std::size_t count, std::size_t n_points, Rng& rng);

}  // namespace tacorr
