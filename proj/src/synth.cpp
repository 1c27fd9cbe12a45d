#include "tacorr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tacorr {

namespace {

using Mat3 = std::array<double, 9>;


Mat3 rot_x(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {1, 0, 0, 0, c, -s, 0, s, c};
}
Mat3 rot_y(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c, 0, s, 0, 1, 0, -s, 0, c};
}
Mat3 rot_z(double a) {
    const double c = std::cos(a), s = std::sin(a);
    return {c, -s, 0, s, c, 0, 0, 0, 1};
}

Mat3 mul(const Mat3& a, const Mat3& b) {
    Mat3 out{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k) out[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
    return out;
}

Vec3 rotate(const Mat3& m, const Vec3& p) {
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2],
            m[3] * p[0] + m[4] * p[1] + m[5] * p[2],
            m[6] * p[0] + m[7] * p[1] + m[8] * p[2]};
}

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 scale3(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

Vec3 normalize3(const Vec3& a) {
    const double n = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    return {a[0] / n, a[1] / n, a[2] / n};
}

Vec3 cross3(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 unit_sphere(Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    Vec3 v;
    do {
        v = {g(rng), g(rng), g(rng)};
    } while (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] < 1e-12);
    return normalize3(v);
}

// Part ids: 0 torso, 1 cranium, 2 muzzle, then per limb chain c in 0..3
// (left arm, right arm, left leg, right leg): 3+2c upper, 4+2c lower.
constexpr int kNumParts = 11;

struct Capsule {
    Vec3 dir;  // unit rest direction
    double length;
    double radius;
};

struct Limb {
    Vec3 attach;
    Capsule upper;
    Capsule lower;
};

const Vec3 kNeck = {0.0, 0.0, 0.58};
const Capsule kTorso = {{0.0, 0.0, 1.0}, 0.55, 0.13};
const Vec3 kCraniumCenter = {0.0, 0.0, 0.12};
constexpr double kCraniumRadius = 0.11;
const Vec3 kMuzzleCenter = {0.11, 0.0, 0.08};
constexpr double kMuzzleRadius = 0.055;

const Limb& limb(int c) {
    static const Limb limbs[4] = {
        {{0.0, 0.16, 0.48},
         {normalize3({0.0, 0.70, -0.71}), 0.22, 0.045},
         {normalize3({0.0, 0.20, -0.98}), 0.20, 0.040}},
        {{0.0, -0.16, 0.48},
         {normalize3({0.0, -0.70, -0.71}), 0.22, 0.045},
         {normalize3({0.0, -0.20, -0.98}), 0.20, 0.040}},
        {{0.0, 0.09, 0.01},
         {normalize3({0.0, 0.12, -0.99}), 0.26, 0.055},
         {{0.0, 0.0, -1.0}, 0.24, 0.050}},
        {{0.0, -0.09, 0.01},
         {normalize3({0.0, -0.12, -0.99}), 0.26, 0.055},
         {{0.0, 0.0, -1.0}, 0.24, 0.050}},
    };
    return limbs[c];
}

// Sampling fractions per part; largest-remainder rounding keeps the sum exact.
const double kPartFraction[kNumParts] = {0.30, 0.11, 0.05, 0.07, 0.065,
                                         0.07, 0.065, 0.07, 0.065, 0.07, 0.065};

Vec3 sample_capsule(const Capsule& cap, Rng& rng) {
    const Vec3 d = cap.dir;
    const Vec3 helper = std::abs(d[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    const Vec3 u = normalize3(cross3(d, helper));
    const Vec3 v = cross3(d, u);
    const double side_area = 2.0 * M_PI * cap.radius * cap.length;
    const double cap_area = 2.0 * M_PI * cap.radius * cap.radius;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double pickv = uni(rng) * (side_area + 2.0 * cap_area);
    if (pickv < side_area) {
        const double t = uni(rng) * cap.length;
        const double phi = uni(rng) * 2.0 * M_PI;
        return add(scale3(d, t),
                   add(scale3(u, cap.radius * std::cos(phi)),
                       scale3(v, cap.radius * std::sin(phi))));
    }
    const bool top = pickv < side_area + cap_area;
    Vec3 w = unit_sphere(rng);
    const double axial = w[0] * d[0] + w[1] * d[1] + w[2] * d[2];
    if ((top && axial < 0.0) || (!top && axial > 0.0)) w = scale3(w, -1.0);
    return add(scale3(d, top ? cap.length : 0.0), scale3(w, cap.radius));
}

struct AngleBound {
    double lo;
    double hi;
};

std::vector<AngleBound> angle_bounds() {
    std::vector<AngleBound> b;
    b.push_back({-0.25, 0.25});  // global yaw
    b.push_back({-0.30, 0.30});  // head pitch
    b.push_back({-0.30, 0.30});  // head yaw
    for (int c = 0; c < 4; ++c) {
        b.push_back({-0.40, 0.40});  // swing about x
        b.push_back({-0.40, 0.40});  // swing about y
        b.push_back({0.0, 0.65});    // bend
    }
    return b;
}

}  // namespace

std::size_t synth_pose_size() { return angle_bounds().size(); }

SynthPose zero_pose() { return SynthPose{std::vector<double>(synth_pose_size(), 0.0)}; }

SynthPose random_pose(Rng& rng, double amplitude) {
    SynthPose pose = zero_pose();
    const auto bounds = angle_bounds();
    for (std::size_t i = 0; i < bounds.size(); ++i) {
        std::uniform_real_distribution<double> dist(bounds[i].lo, bounds[i].hi);
        pose.angles[i] = amplitude * dist(rng);
    }
    return pose;
}

SynthPose pose_add_scaled(const SynthPose& base, const SynthPose& direction, double t) {
    if (base.angles.size() != direction.angles.size())
        throw DimensionError("pose_add_scaled: pose sizes disagree");
    SynthPose out = base;
    const auto bounds = angle_bounds();
    for (std::size_t i = 0; i < out.angles.size(); ++i)
        out.angles[i] =
            std::clamp(out.angles[i] + t * direction.angles[i], bounds[i].lo, bounds[i].hi);
    return out;
}

SynthSample sample_prototype(std::size_t n_points, Rng& rng) {
    if (n_points < 32) throw ParameterError("sample_prototype: need at least 32 points");
    // Largest-remainder apportionment of the per-part budget.
    std::array<std::size_t, kNumParts> budget{};
    std::array<double, kNumParts> remainder{};
    std::size_t assigned = 0;
    for (int p = 0; p < kNumParts; ++p) {
        const double ideal = kPartFraction[p] * static_cast<double>(n_points);
        budget[p] = static_cast<std::size_t>(ideal);
        remainder[p] = ideal - static_cast<double>(budget[p]);
        assigned += budget[p];
    }
    while (assigned < n_points) {
        int best = 0;
        for (int p = 1; p < kNumParts; ++p)
            if (remainder[p] > remainder[best]) best = p;
        ++budget[best];
        remainder[best] = -1.0;
        ++assigned;
    }
    SynthSample sample;
    sample.points.reserve(n_points);
    for (int part = 0; part < kNumParts; ++part) {
        for (std::size_t i = 0; i < budget[part]; ++i) {
            Vec3 local;
            if (part == 0) {
                local = sample_capsule(kTorso, rng);
            } else if (part == 1) {
                local = add(kCraniumCenter, scale3(unit_sphere(rng), kCraniumRadius));
            } else if (part == 2) {
                local = add(kMuzzleCenter, scale3(unit_sphere(rng), kMuzzleRadius));
            } else {
                const int chain = (part - 3) / 2;
                const bool upper = (part - 3) % 2 == 0;
                local = sample_capsule(upper ? limb(chain).upper : limb(chain).lower, rng);
            }
            sample.points.push_back({part, local});
        }
    }
    return sample;
}

PointCloud pose_cloud(const SynthSample& sample, const SynthPose& pose) {
    if (pose.angles.size() != synth_pose_size())
        throw DimensionError("pose_cloud: pose has wrong angle count");
    const Mat3 global = rot_z(pose.angles[0]);
    const Mat3 head = mul(rot_y(pose.angles[1]), rot_z(pose.angles[2]));
    std::array<Mat3, 4> upper_rot, lower_rot;
    std::array<Vec3, 4> elbow;
    for (int c = 0; c < 4; ++c) {
        const double sx = pose.angles[3 + 3 * c], sy = pose.angles[4 + 3 * c],
                     bend = pose.angles[5 + 3 * c];
        upper_rot[c] = mul(rot_x(sx), rot_y(sy));
        lower_rot[c] = mul(upper_rot[c], rot_x(bend));
        elbow[c] = add(limb(c).attach,
                       rotate(upper_rot[c], scale3(limb(c).upper.dir, limb(c).upper.length)));
    }
    PointCloud cloud;
    cloud.positions.reserve(sample.points.size());
    for (const auto& mp : sample.points) {
        Vec3 world;
        if (mp.part == 0) {
            world = mp.local;
        } else if (mp.part == 1 || mp.part == 2) {
            world = add(kNeck, rotate(head, mp.local));
        } else {
            const int chain = (mp.part - 3) / 2;
            const bool upper = (mp.part - 3) % 2 == 0;
            world = upper ? add(limb(chain).attach, rotate(upper_rot[chain], mp.local))
                          : add(elbow[chain], rotate(lower_rot[chain], mp.local));
        }
        cloud.positions.push_back(rotate(global, world));
    }
    return cloud;
}

ShapePair synth_pair(std::size_t n_points, Rng& rng) {
    SynthSample sample = sample_prototype(n_points, rng);
    const SynthPose pose_a = random_pose(rng);
    const SynthPose pose_b = random_pose(rng);
    ShapePair pair;
    pair.source = pose_cloud(sample, pose_a);
    pair.target = pose_cloud(sample, pose_b);
    Correspondence gt(n_points);
    std::iota(gt.begin(), gt.end(), 0);
    pair.ground_truth = std::move(gt);
    return pair;
}

std::vector<ShapePair> synth_pairs(std::size_t count, std::size_t n_points, Rng& rng) {
    std::vector<ShapePair> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(synth_pair(n_points, rng));
    return out;
}

}  // namespace tacorr
