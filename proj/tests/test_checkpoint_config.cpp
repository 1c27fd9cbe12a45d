#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "tacorr/checkpoint.hpp"
#include "tacorr/config.hpp"

using namespace tacorr;

namespace {

namespace fs = std::filesystem;

PointCloud random_normalized_cloud(std::size_t n, Rng& rng) {
    PointCloud c;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    c.positions.resize(n);
    for (Vec3& p : c.positions) p = {u(rng), u(rng), u(rng)};
    return normalize(c);
}

Model small_model(Rng& rng) {
    ModelConfig cfg;
    cfg.points = 8;
    cfg.feature_dim = 8;
    cfg.layers = 2;
    cfg.templates = 2;
    cfg.template_points = 8;
    cfg.knn_k = 3;
    std::vector<PointCloud> seeds = {random_normalized_cloud(8, rng),
                                     random_normalized_cloud(8, rng)};
    return Model::init(cfg, seeds, rng);
}

}  // namespace

TEST_CASE("checkpoint round trip is exact") {
    Rng rng(101);
    Model model = small_model(rng);
    const fs::path path = fs::temp_directory_path() / "tacorr_ckpt_rt.ckpt";
    save_checkpoint(model, path);
    Model back = load_checkpoint(path);
    CHECK(back.cfg == model.cfg);
    std::vector<Parameter*> a = model.parameters();
    std::vector<Parameter*> b = back.parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i]->name == b[i]->name);
        CHECK(a[i]->value.shape == b[i]->value.shape);
        CHECK(a[i]->value.values == b[i]->value.values);  // bitwise
    }
}

TEST_CASE("checkpoint loader rejects corrupted files") {
    Rng rng(102);
    Model model = small_model(rng);
    const fs::path dir = fs::temp_directory_path() / "tacorr_ckpt_bad";
    fs::create_directories(dir);

    SUBCASE("bad magic") {
        std::ofstream out(dir / "bad.ckpt", std::ios::binary);
        out << "NOTACKPT garbage";
        out.close();
        CHECK_THROWS_AS(load_checkpoint(dir / "bad.ckpt"), ParseError);
    }
    SUBCASE("truncated file") {
        const fs::path good = dir / "good.ckpt";
        save_checkpoint(model, good);
        const auto size = fs::file_size(good);
        std::ifstream in(good, std::ios::binary);
        std::string data(size / 2, '\0');
        in.read(data.data(), static_cast<std::streamsize>(data.size()));
        std::ofstream out(dir / "trunc.ckpt", std::ios::binary);
        out << data;
        out.close();
        CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), ParseError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint(dir / "nothere.ckpt"), IoError);
    }
}

TEST_CASE("profiles resolve and reject unknown names") {
    TrainConfig desk = profile_config("desk");
    CHECK(desk.model.points == 128);
    CHECK(desk.model.feature_dim == 64);
    CHECK(desk.model.layers == 2);
    CHECK(desk.model.templates == 2);
    CHECK(desk.batch_size == 2);

    TrainConfig paper = profile_config("paper");
    CHECK(paper.model.points == 1024);
    CHECK(paper.model.feature_dim == 512);
    CHECK(paper.model.layers == 4);
    CHECK(paper.model.templates == 4);
    CHECK(paper.batch_size == 4);
    CHECK(paper.lr == doctest::Approx(5e-4));
    CHECK(paper.weight_decay == doctest::Approx(5e-4));
    CHECK(paper.weights.trans == doctest::Approx(0.5));
    CHECK(paper.weights.align == doctest::Approx(0.5));
    CHECK(paper.weights.tc == doctest::Approx(1.0));
    CHECK(paper.weights.constr == doctest::Approx(1.0));

    CHECK_THROWS_AS(profile_config("garage"), ConfigError);
}

TEST_CASE("config parsing: overrides, unknown keys, type errors") {
    using nlohmann::json;
    SUBCASE("missing keys fall back to the profile") {
        TrainConfig c = parse_config(json::parse(R"({"profile":"desk","steps":7})"));
        CHECK(c.steps == 7);
        CHECK(c.model.points == 128);
    }
    SUBCASE("unknown keys are all reported") {
        try {
            parse_config(json::parse(R"({"stepz":1,"lrx":2,"steps":5})"));
            FAIL("expected ConfigError");
        } catch (const ConfigError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("stepz") != std::string::npos);
            CHECK(msg.find("lrx") != std::string::npos);
        }
    }
    SUBCASE("type errors are rejected") {
        CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"steps":"many"})")),
                        ConfigError);
    }
    SUBCASE("semantic validation") {
        CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"lr":-1.0})")), ConfigError);
        CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"points":0})")), ConfigError);
        CHECK_THROWS_AS(parse_config(nlohmann::json::parse(R"({"knn_k":128})")), ConfigError);
    }
    SUBCASE("echo round-trips through parse") {
        TrainConfig c = profile_config("desk");
        c.steps = 123;
        c.weights.trans = 0.25;
        nlohmann::json echoed = config_to_json(c, "desk");
        TrainConfig back = parse_config(echoed);
        CHECK(back.steps == 123);
        CHECK(back.weights.trans == doctest::Approx(0.25));
        CHECK(back.model.points == c.model.points);
    }
}
