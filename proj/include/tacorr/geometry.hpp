#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "tacorr/tensor.hpp"

namespace tacorr {

using Vec3 = std::array<double, 3>;

// One shape: N xyz positions, optionally with per-point colors in [0,1].
struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> colors;  // empty or same length as positions

    std::size_t size() const { return positions.size(); }
    bool has_colors() const { return !colors.empty(); }

    Tensor to_tensor() const;
    static PointCloud from_tensor(const Tensor& t);
};

// Per-source-point index into the target cloud.
using Correspondence = std::vector<int>;

// Row-major N x k neighbor indices, sorted by decreasing affinity,
// ties broken by lower index.
struct NeighborList {
    std::size_t k = 0;
    std::vector<int> indices;

    std::size_t rows() const { return k == 0 ? 0 : indices.size() / k; }
    int at(std::size_t row, std::size_t j) const { return indices[row * k + j]; }
};

// k reference rows with the highest dot-product similarity per query row.
NeighborList knn_latent(const Tensor& query_feats, const Tensor& ref_feats, std::size_t k);
// Same with affinity = negative squared Euclidean distance.
NeighborList knn_euclidean(const PointCloud& query, const PointCloud& ref, std::size_t k);

// Squared-distance chamfer with per-cloud means (value-only; the
// differentiable version is Tape::chamfer).
double chamfer_distance(const PointCloud& x, const PointCloud& y);

// Centroid to origin, scaled so the farthest point has norm 1. A degenerate
// all-identical cloud is centered and left unscaled.
PointCloud normalize(const PointCloud& cloud);

double max_pairwise_distance(const PointCloud& cloud);

enum class CloudFormat { XyzText, Ply };

CloudFormat format_from_path(const std::filesystem::path& path);
PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format);
PointCloud load_cloud(const std::filesystem::path& path);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format);
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path);

// Deterministic position-based colormap: bounding-box-normalized coordinates
// mapped to RGB on the 8-bit grid.
std::vector<Vec3> coordinate_colormap(const PointCloud& cloud);

// Writes <dir>/source_colored.ply (colormap colors) and
// <dir>/target_colored.ply (each target point takes the color of the source
// point(s) mapped onto it; unmatched target points gray).
void export_correspondence_ply(const PointCloud& source, const PointCloud& target,
                               const Correspondence& corr, const std::filesystem::path& dir);

}  // namespace tacorr
