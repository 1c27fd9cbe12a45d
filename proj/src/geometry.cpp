#include "tacorr/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tacorr/tape.hpp"

namespace tacorr {

namespace {

double sq_dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return dx * dx + dy * dy + dz * dz;
}

void write_double(std::ostream& os, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << buf;
}

int to_byte(double c) {
    const double clamped = std::clamp(c, 0.0, 1.0);
    return static_cast<int>(std::lround(clamped * 255.0));
}

}  // namespace

Tensor PointCloud::to_tensor() const {
    Tensor t = Tensor::zeros({positions.size(), 3});
    for (std::size_t i = 0; i < positions.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) t.values[i * 3 + c] = positions[i][c];
    return t;
}

PointCloud PointCloud::from_tensor(const Tensor& t) {
    t.require_rank2("PointCloud::from_tensor");
    if (t.cols() != 3) throw DimensionError("PointCloud::from_tensor: expected N x 3");
    PointCloud c;
    c.positions.resize(t.rows());
    for (std::size_t i = 0; i < t.rows(); ++i)
        c.positions[i] = {t.values[i * 3], t.values[i * 3 + 1], t.values[i * 3 + 2]};
    return c;
}

NeighborList knn_latent(const Tensor& query_feats, const Tensor& ref_feats, std::size_t k) {
    query_feats.require_rank2("knn_latent");
    ref_feats.require_rank2("knn_latent");
    if (query_feats.cols() != ref_feats.cols())
        throw DimensionError("knn_latent: feature dims disagree");
    const std::size_t n = query_feats.rows(), m = ref_feats.rows(), d = query_feats.cols();
    if (k > m) throw ParameterError("knn_latent: k exceeds reference size");
    NeighborList out;
    out.k = k;
    out.indices.reserve(n * k);
    std::vector<double> affinity(m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* q = query_feats.values.data() + i * d;
        for (std::size_t j = 0; j < m; ++j) {
            const double* r = ref_feats.values.data() + j * d;
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) s += q[c] * r[c];
            affinity[j] = s;
        }
        for (int idx : topk_desc(affinity.data(), m, k)) out.indices.push_back(idx);
    }
    return out;
}

NeighborList knn_euclidean(const PointCloud& query, const PointCloud& ref, std::size_t k) {
    const std::size_t n = query.size(), m = ref.size();
    if (k > m) throw ParameterError("knn_euclidean: k exceeds reference size");
    NeighborList out;
    out.k = k;
    out.indices.reserve(n * k);
    std::vector<double> affinity(m);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j)
            affinity[j] = -sq_dist(query.positions[i], ref.positions[j]);
        for (int idx : topk_desc(affinity.data(), m, k)) out.indices.push_back(idx);
    }
    return out;
}

double chamfer_distance(const PointCloud& x, const PointCloud& y) {
    if (x.size() == 0 || y.size() == 0) throw ParameterError("chamfer_distance: empty cloud");
    double sum_x = 0.0;
    std::vector<double> min_y(y.size(), std::numeric_limits<double>::infinity());
    for (const Vec3& p : x.positions) {
        double best = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < y.size(); ++j) {
            const double d = sq_dist(p, y.positions[j]);
            best = std::min(best, d);
            min_y[j] = std::min(min_y[j], d);
        }
        sum_x += best;
    }
    double sum_y = 0.0;
    for (double d : min_y) sum_y += d;
    return sum_x / static_cast<double>(x.size()) + sum_y / static_cast<double>(y.size());
}

PointCloud normalize(const PointCloud& cloud) {
    if (cloud.size() == 0) throw ParameterError("normalize: empty cloud");
    Vec3 centroid{0.0, 0.0, 0.0};
    for (const Vec3& p : cloud.positions)
        for (std::size_t c = 0; c < 3; ++c) centroid[c] += p[c];
    for (std::size_t c = 0; c < 3; ++c) centroid[c] /= static_cast<double>(cloud.size());
    PointCloud out = cloud;
    double max_norm = 0.0;
    for (Vec3& p : out.positions) {
        for (std::size_t c = 0; c < 3; ++c) p[c] -= centroid[c];
        max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    }
    if (max_norm > 0.0)
        for (Vec3& p : out.positions)
            for (std::size_t c = 0; c < 3; ++c) p[c] /= max_norm;
    return out;
}

double max_pairwise_distance(const PointCloud& cloud) {
    if (cloud.size() < 2) throw ParameterError("max_pairwise_distance: needs at least 2 points");
    double best = 0.0;
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (std::size_t j = i + 1; j < cloud.size(); ++j)
            best = std::max(best, sq_dist(cloud.positions[i], cloud.positions[j]));
    return std::sqrt(best);
}

CloudFormat format_from_path(const std::filesystem::path& path) {
    const std::string ext = path.extension().string();
    if (ext == ".ply") return CloudFormat::Ply;
    if (ext == ".xyz" || ext == ".txt") return CloudFormat::XyzText;
    throw ParameterError("unrecognized point cloud extension '" + ext + "' in " + path.string());
}

PointCloud load_cloud(const std::filesystem::path& path) {
    return load_cloud(path, format_from_path(path));
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path) {
    save_cloud(cloud, path, format_from_path(path));
}

namespace {

PointCloud load_xyz(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    PointCloud cloud;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::istringstream ls(line);
        Vec3 p;
        if (!(ls >> p[0] >> p[1] >> p[2]))
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected three coordinates, got '" + line + "'");
        cloud.positions.push_back(p);
    }
    if (cloud.size() == 0) throw ParseError(path.string() + ": no points found");
    return cloud;
}

void save_xyz(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (const Vec3& p : cloud.positions) {
        for (std::size_t c = 0; c < 3; ++c) {
            if (c) out << ' ';
            write_double(out, p[c]);
        }
        out << '\n';
    }
}

PointCloud load_ply(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::string line;
    std::size_t lineno = 0;
    auto next_line = [&]() -> std::string& {
        if (!std::getline(in, line))
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": unexpected end of file");
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
        return line;
    };
    if (next_line() != "ply")
        throw ParseError(path.string() + ":1: not a PLY file (missing 'ply' magic)");
    if (next_line() != "format ascii 1.0")
        throw ParseError(path.string() + ":" + std::to_string(lineno) +
                         ": only 'format ascii 1.0' is supported, got '" + line + "'");
    std::size_t vertex_count = 0;
    bool have_vertex_element = false;
    std::vector<std::string> properties;
    while (true) {
        next_line();
        if (line == "end_header") break;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "comment") continue;
        if (word == "element") {
            std::string name;
            ls >> name;
            if (name != "vertex")
                throw ParseError(path.string() + ":" + std::to_string(lineno) +
                                 ": unsupported element '" + name + "'");
            if (!(ls >> vertex_count))
                throw ParseError(path.string() + ":" + std::to_string(lineno) +
                                 ": bad vertex count in '" + line + "'");
            have_vertex_element = true;
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (name.empty())
                throw ParseError(path.string() + ":" + std::to_string(lineno) +
                                 ": malformed property line '" + line + "'");
            properties.push_back(name);
        } else {
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": unrecognized header line '" + line + "'");
        }
    }
    if (!have_vertex_element)
        throw ParseError(path.string() + ": header has no 'element vertex' line");
    const std::vector<std::string> xyz = {"x", "y", "z"};
    const std::vector<std::string> xyzrgb = {"x", "y", "z", "red", "green", "blue"};
    bool with_colors;
    if (properties == xyz)
        with_colors = false;
    else if (properties == xyzrgb)
        with_colors = true;
    else
        throw ParseError(path.string() + ": unsupported property layout");
    PointCloud cloud;
    cloud.positions.reserve(vertex_count);
    for (std::size_t i = 0; i < vertex_count; ++i) {
        next_line();
        std::istringstream ls(line);
        Vec3 p;
        if (!(ls >> p[0] >> p[1] >> p[2]))
            throw ParseError(path.string() + ":" + std::to_string(lineno) +
                             ": expected vertex coordinates, got '" + line + "'");
        cloud.positions.push_back(p);
        if (with_colors) {
            int r, g, b;
            if (!(ls >> r >> g >> b))
                throw ParseError(path.string() + ":" + std::to_string(lineno) +
                                 ": expected rgb bytes, got '" + line + "'");
            cloud.colors.push_back(
                {r / 255.0, g / 255.0, b / 255.0});
        }
    }
    if (std::getline(in, line) && line.find_first_not_of(" \t\r\n") != std::string::npos)
        throw ParseError(path.string() + ": trailing data after " +
                         std::to_string(vertex_count) + " vertices");
    if (cloud.size() == 0) throw ParseError(path.string() + ": vertex count is zero");
    return cloud;
}

void save_ply(const PointCloud& cloud, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    const bool with_colors = cloud.has_colors();
    if (with_colors && cloud.colors.size() != cloud.positions.size())
        throw ContractError("save_ply: color count mismatch");
    out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
        << "\nproperty float x\nproperty float y\nproperty float z\n";
    if (with_colors)
        out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    out << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const Vec3& p = cloud.positions[i];
        for (std::size_t c = 0; c < 3; ++c) {
            if (c) out << ' ';
            write_double(out, p[c]);
        }
        if (with_colors) {
            const Vec3& col = cloud.colors[i];
            out << ' ' << to_byte(col[0]) << ' ' << to_byte(col[1]) << ' ' << to_byte(col[2]);
        }
        out << '\n';
    }
}

}  // namespace

PointCloud load_cloud(const std::filesystem::path& path, CloudFormat format) {
    return format == CloudFormat::Ply ? load_ply(path) : load_xyz(path);
}

void save_cloud(const PointCloud& cloud, const std::filesystem::path& path, CloudFormat format) {
    if (cloud.size() == 0) throw ParameterError("save_cloud: empty cloud");
    if (format == CloudFormat::Ply)
        save_ply(cloud, path);
    else
        save_xyz(cloud, path);
}

std::vector<Vec3> coordinate_colormap(const PointCloud& cloud) {
    Vec3 lo = cloud.positions.at(0), hi = cloud.positions.at(0);
    for (const Vec3& p : cloud.positions)
        for (std::size_t c = 0; c < 3; ++c) {
            lo[c] = std::min(lo[c], p[c]);
            hi[c] = std::max(hi[c], p[c]);
        }
    std::vector<Vec3> colors(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            const double span = hi[c] - lo[c];
            const double t = span > 0.0 ? (cloud.positions[i][c] - lo[c]) / span : 0.5;
            colors[i][c] = to_byte(t) / 255.0;  // snap to the 8-bit grid
        }
    return colors;
}

void export_correspondence_ply(const PointCloud& source, const PointCloud& target,
                               const Correspondence& corr, const std::filesystem::path& dir) {
    if (corr.size() != source.size())
        throw ContractError("export_correspondence_ply: correspondence length mismatch");
    for (int idx : corr)
        if (idx < 0 || static_cast<std::size_t>(idx) >= target.size())
            throw ParameterError("export_correspondence_ply: target index out of range");
    std::filesystem::create_directories(dir);
    PointCloud colored_source = source;
    colored_source.colors = coordinate_colormap(source);
    PointCloud colored_target = target;
    colored_target.colors.assign(target.size(), Vec3{127.0 / 255, 127.0 / 255, 127.0 / 255});
    for (std::size_t i = 0; i < corr.size(); ++i)
        colored_target.colors[static_cast<std::size_t>(corr[i])] = colored_source.colors[i];
    save_cloud(colored_source, dir / "source_colored.ply", CloudFormat::Ply);
    save_cloud(colored_target, dir / "target_colored.ply", CloudFormat::Ply);
}

}  // namespace tacorr
