#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "tacorr/geometry.hpp"
#include "tacorr/gradcheck.hpp"
#include "tacorr/tape.hpp"

using namespace tacorr;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const char* tag) {
    fs::path dir = fs::temp_directory_path() / (std::string("tacorr_geom_") + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

PointCloud random_cloud(std::size_t n, Rng& rng, double scale = 1.0) {
    PointCloud c;
    std::uniform_real_distribution<double> u(-scale, scale);
    c.positions.resize(n);
    for (Vec3& p : c.positions) p = {u(rng), u(rng), u(rng)};
    return c;
}

// Exhaustive reference: full stable sort of every affinity with the same tie
// rule, independent of the partial-selection implementation.
std::vector<int> oracle_topk(const std::vector<double>& affinity, std::size_t k) {
    std::vector<int> order(affinity.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (affinity[a] != affinity[b]) return affinity[a] > affinity[b];
        return a < b;
    });
    order.resize(k);
    return order;
}

double oracle_chamfer(const PointCloud& x, const PointCloud& y) {
    auto side = [](const PointCloud& from, const PointCloud& to) {
        double acc = 0.0;
        for (const Vec3& p : from.positions) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec3& q : to.positions) {
                const double dx = p[0] - q[0], dy = p[1] - q[1], dz = p[2] - q[2];
                best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
            acc += best;
        }
        return acc / static_cast<double>(from.size());
    };
    return side(x, y) + side(y, x);
}

}  // namespace

TEST_CASE("knn_latent hand cases") {
    // Orthonormal self-query: nearest neighbor is the point itself.
    Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    NeighborList self = knn_latent(eye, eye, 1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(self.at(i, 0) == static_cast<int>(i));

    // Query e2 against {e1,e2,e3}: best is index 1, then the 0/2 tie breaks low.
    Tensor query({1, 3}, {0, 1, 0});
    NeighborList two = knn_latent(query, eye, 2);
    CHECK(two.at(0, 0) == 1);
    CHECK(two.at(0, 1) == 0);

    CHECK_THROWS_AS(knn_latent(query, eye, 4), ParameterError);
}

TEST_CASE("knn_euclidean hand cases") {
    PointCloud ref;
    ref.positions = {{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
    PointCloud query;
    query.positions = {{0.9, 0, 0}};
    NeighborList nn = knn_euclidean(query, ref, 2);
    CHECK(nn.at(0, 0) == 1);
    CHECK(nn.at(0, 1) == 0);

    PointCloud coincident;
    coincident.positions = {{3, 0, 0}};
    CHECK(knn_euclidean(coincident, ref, 1).at(0, 0) == 2);
}

TEST_CASE("knn oracle equivalence on random instances") {
    Rng rng(31);
    std::uniform_int_distribution<std::size_t> size_dist(2, 64);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t n = size_dist(rng), m = size_dist(rng);
        const std::size_t k = std::uniform_int_distribution<std::size_t>(1, m)(rng);

        Tensor qf = Tensor::uniform({n, 5}, -1, 1, rng);
        Tensor rf = Tensor::uniform({m, 5}, -1, 1, rng);
        NeighborList latent = knn_latent(qf, rf, k);
        PointCloud qc = random_cloud(n, rng), rc = random_cloud(m, rng);
        NeighborList euclid = knn_euclidean(qc, rc, k);

        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> aff_latent(m), aff_euclid(m);
            for (std::size_t j = 0; j < m; ++j) {
                double dot = 0;
                for (std::size_t c = 0; c < 5; ++c)
                    dot += qf.values[i * 5 + c] * rf.values[j * 5 + c];
                aff_latent[j] = dot;
                const double dx = qc.positions[i][0] - rc.positions[j][0];
                const double dy = qc.positions[i][1] - rc.positions[j][1];
                const double dz = qc.positions[i][2] - rc.positions[j][2];
                aff_euclid[j] = -(dx * dx + dy * dy + dz * dz);
            }
            const auto want_latent = oracle_topk(aff_latent, k);
            const auto want_euclid = oracle_topk(aff_euclid, k);
            for (std::size_t j = 0; j < k; ++j) {
                CHECK(latent.at(i, j) == want_latent[j]);
                CHECK(euclid.at(i, j) == want_euclid[j]);
            }
        }
    }
}

TEST_CASE("no duplicate neighbor indices per row") {
    Rng rng(32);
    Tensor qf = Tensor::uniform({10, 4}, -1, 1, rng);
    Tensor rf = Tensor::uniform({12, 4}, -1, 1, rng);
    NeighborList nn = knn_latent(qf, rf, 6);
    for (std::size_t i = 0; i < 10; ++i) {
        std::vector<int> row;
        for (std::size_t j = 0; j < 6; ++j) row.push_back(nn.at(i, j));
        std::sort(row.begin(), row.end());
        CHECK(std::adjacent_find(row.begin(), row.end()) == row.end());
    }
}

TEST_CASE("chamfer_distance matches hand case and brute force") {
    PointCloud x, y;
    x.positions = {{0, 0, 0}, {1, 0, 0}};
    y.positions = {{0, 0, 0}, {0, 2, 0}};
    CHECK(chamfer_distance(x, y) == doctest::Approx(2.5));
    CHECK(chamfer_distance(x, x) == doctest::Approx(0.0));
    CHECK_THROWS_AS(chamfer_distance(PointCloud{}, y), ParameterError);

    Rng rng(33);
    std::uniform_int_distribution<std::size_t> size_dist(1, 64);
    for (int trial = 0; trial < 100; ++trial) {
        PointCloud a = random_cloud(size_dist(rng), rng);
        PointCloud b = random_cloud(size_dist(rng), rng);
        const double got = chamfer_distance(a, b);
        CHECK(std::abs(got - oracle_chamfer(a, b)) < 1e-9);
        CHECK(std::abs(got - chamfer_distance(b, a)) < 1e-12);
        CHECK(got >= 0.0);
        // The differentiable op agrees with the plain evaluation.
        Tape t;
        CHECK(std::abs(got - t.value(t.chamfer(t.constant(a.to_tensor()),
                                               t.constant(b.to_tensor())))
                                 .values[0]) < 1e-12);
    }
}

TEST_CASE("normalize centers, scales, and is idempotent") {
    PointCloud cube;
    for (int x = 0; x <= 1; ++x)
        for (int y = 0; y <= 1; ++y)
            for (int z = 0; z <= 1; ++z)
                cube.positions.push_back({double(x), double(y), double(z)});
    PointCloud n = normalize(cube);
    Vec3 centroid{0, 0, 0};
    double max_norm = 0;
    for (const Vec3& p : n.positions) {
        for (int c = 0; c < 3; ++c) centroid[c] += p[c] / 8.0;
        max_norm = std::max(max_norm, std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]));
    }
    for (int c = 0; c < 3; ++c) CHECK(std::abs(centroid[c]) < 1e-6);
    CHECK(max_norm == doctest::Approx(1.0).epsilon(1e-6));

    PointCloud again = normalize(n);
    for (std::size_t i = 0; i < 8; ++i)
        for (int c = 0; c < 3; ++c)
            CHECK(std::abs(again.positions[i][c] - n.positions[i][c]) < 1e-6);

    PointCloud single;
    single.positions = {{5, -3, 2}};
    PointCloud sn = normalize(single);
    for (int c = 0; c < 3; ++c) CHECK(sn.positions[0][c] == 0.0);

    // Degenerate all-identical cloud: centered, scale left alone.
    PointCloud flat;
    flat.positions = {{1, 1, 1}, {1, 1, 1}};
    PointCloud fn = normalize(flat);
    for (const Vec3& p : fn.positions)
        for (int c = 0; c < 3; ++c) CHECK(p[c] == 0.0);
}

TEST_CASE("max_pairwise_distance") {
    PointCloud two;
    two.positions = {{0, 0, 0}, {3, 0, 0}};
    CHECK(max_pairwise_distance(two) == doctest::Approx(3.0));

    PointCloud cube;
    for (int x = 0; x <= 1; ++x)
        for (int y = 0; y <= 1; ++y)
            for (int z = 0; z <= 1; ++z)
                cube.positions.push_back({double(x), double(y), double(z)});
    CHECK(max_pairwise_distance(cube) == doctest::Approx(std::sqrt(3.0)));

    PointCloud one;
    one.positions = {{0, 0, 0}};
    CHECK_THROWS_AS(max_pairwise_distance(one), ParameterError);

    Rng rng(34);
    for (int trial = 0; trial < 100; ++trial) {
        PointCloud c = random_cloud(std::uniform_int_distribution<std::size_t>(2, 64)(rng), rng);
        double best = 0;
        for (std::size_t i = 0; i < c.size(); ++i)
            for (std::size_t j = 0; j < c.size(); ++j) {
                const double dx = c.positions[i][0] - c.positions[j][0];
                const double dy = c.positions[i][1] - c.positions[j][1];
                const double dz = c.positions[i][2] - c.positions[j][2];
                best = std::max(best, std::sqrt(dx * dx + dy * dy + dz * dz));
            }
        CHECK(max_pairwise_distance(c) == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("xyz round trip preserves count exactly and coords to 1e-6") {
    const fs::path dir = temp_dir("xyz");
    Rng rng(35);
    PointCloud cloud = random_cloud(1024, rng, 2.5);
    save_cloud(cloud, dir / "c.xyz", CloudFormat::XyzText);
    PointCloud back = load_cloud(dir / "c.xyz", CloudFormat::XyzText);
    REQUIRE(back.size() == 1024);
    double worst = 0;
    for (std::size_t i = 0; i < 1024; ++i)
        for (int c = 0; c < 3; ++c)
            worst = std::max(worst, std::abs(back.positions[i][c] - cloud.positions[i][c]));
    CHECK(worst < 1e-6);
}

TEST_CASE("ascii ply round trips coordinates exactly and colors intact") {
    const fs::path dir = temp_dir("ply");
    Rng rng(36);
    PointCloud cloud = random_cloud(257, rng, 1.7);
    cloud.colors.resize(cloud.size());
    std::uniform_int_distribution<int> byte(0, 255);
    for (Vec3& c : cloud.colors) c = {byte(rng) / 255.0, byte(rng) / 255.0, byte(rng) / 255.0};

    save_cloud(cloud, dir / "c.ply", CloudFormat::Ply);
    PointCloud back = load_cloud(dir / "c.ply", CloudFormat::Ply);
    REQUIRE(back.size() == cloud.size());
    REQUIRE(back.has_colors());
    for (std::size_t i = 0; i < cloud.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            CHECK(back.positions[i][c] == cloud.positions[i][c]);  // exact
            CHECK(back.colors[i][c] == doctest::Approx(cloud.colors[i][c]).epsilon(1e-12));
        }
}

TEST_CASE("malformed files produce parse errors naming the line") {
    const fs::path dir = temp_dir("bad");
    {
        std::ofstream out(dir / "bad.ply");
        out << "ply\nformat ascii 1.0\nelement vertex tori\nend_header\n";
    }
    CHECK_THROWS_WITH_AS(load_cloud(dir / "bad.ply", CloudFormat::Ply),
                         doctest::Contains(":3:"), ParseError);
    {
        std::ofstream out(dir / "short.ply");
        out << "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
               "property float z\nend_header\n0 0 0\n";
    }
    CHECK_THROWS_AS(load_cloud(dir / "short.ply", CloudFormat::Ply), ParseError);
    {
        std::ofstream out(dir / "bad.xyz");
        out << "0 0 0\n1 2\n";
    }
    CHECK_THROWS_WITH_AS(load_cloud(dir / "bad.xyz", CloudFormat::XyzText),
                         doctest::Contains(":2:"), ParseError);
    {
        std::ofstream out(dir / "notply.ply");
        out << "plyx\n";
    }
    CHECK_THROWS_AS(load_cloud(dir / "notply.ply", CloudFormat::Ply), ParseError);
}

TEST_CASE("export_correspondence_ply writes matching colors") {
    const fs::path dir = temp_dir("corr");
    Rng rng(37);
    PointCloud cloud = random_cloud(16, rng);

    SUBCASE("identity correspondence on identical clouds") {
        Correspondence identity(16);
        for (int i = 0; i < 16; ++i) identity[i] = i;
        export_correspondence_ply(cloud, cloud, identity, dir);
        PointCloud src = load_cloud(dir / "source_colored.ply", CloudFormat::Ply);
        PointCloud tgt = load_cloud(dir / "target_colored.ply", CloudFormat::Ply);
        REQUIRE(src.has_colors());
        REQUIRE(tgt.has_colors());
        for (std::size_t i = 0; i < 16; ++i)
            for (int c = 0; c < 3; ++c) CHECK(src.colors[i][c] == tgt.colors[i][c]);
    }
    SUBCASE("reversed correspondence reverses the target colors") {
        Correspondence reversed(16);
        for (int i = 0; i < 16; ++i) reversed[i] = 15 - i;
        export_correspondence_ply(cloud, cloud, reversed, dir);
        PointCloud src = load_cloud(dir / "source_colored.ply", CloudFormat::Ply);
        PointCloud tgt = load_cloud(dir / "target_colored.ply", CloudFormat::Ply);
        for (std::size_t i = 0; i < 16; ++i)
            for (int c = 0; c < 3; ++c) CHECK(src.colors[i][c] == tgt.colors[15 - i][c]);
    }
    SUBCASE("unmatched target points stay gray") {
        Correspondence all_zero(16, 0);
        export_correspondence_ply(cloud, cloud, all_zero, dir);
        PointCloud tgt = load_cloud(dir / "target_colored.ply", CloudFormat::Ply);
        for (std::size_t i = 1; i < 16; ++i)
            for (int c = 0; c < 3; ++c)
                CHECK(tgt.colors[i][c] == doctest::Approx(127.0 / 255.0));
    }
    SUBCASE("invalid index is rejected") {
        Correspondence bad(16, 99);
        CHECK_THROWS_AS(export_correspondence_ply(cloud, cloud, bad, dir), ParameterError);
    }
}

TEST_CASE("chamfer gradient check away from argmin ties") {
    Rng rng(38);
    for (std::uint64_t trial = 0; trial < 5; ++trial) {
        Tensor x = Tensor::uniform({5, 3}, -1, 1, rng);
        Tensor y = Tensor::uniform({7, 3}, -1, 1, rng);
        const double err = fd_check_leaves(
            [](Tape& t, const std::vector<Var>& v) { return t.chamfer(v[0], v[1]); }, {x, y});
        CHECK(err < 1e-4);
    }
}
