#include "tacorr/config.hpp"

#include <fstream>

namespace tacorr {

namespace {

using nlohmann::json;

struct KeyBinding {
    std::string key;
    std::function<void(TrainConfig&, const json&)> apply;
    std::function<json(const TrainConfig&)> echo;
};

template <typename T, typename Field>
KeyBinding bind(std::string key, Field TrainConfig::* field) {
    return {key,
            [field](TrainConfig& c, const json& v) { c.*field = v.get<T>(); },
            [field](const TrainConfig& c) { return json(static_cast<T>(c.*field)); }};
}

template <typename T, typename Field>
KeyBinding bind_model(std::string key, Field ModelConfig::* field) {
    return {key,
            [field](TrainConfig& c, const json& v) { c.model.*field = v.get<T>(); },
            [field](const TrainConfig& c) { return json(static_cast<T>(c.model.*field)); }};
}

template <typename Field>
KeyBinding bind_weight(std::string key, Field LossWeights::* field) {
    return {key,
            [field](TrainConfig& c, const json& v) { c.weights.*field = v.get<double>(); },
            [field](const TrainConfig& c) { return json(c.weights.*field); }};
}

const std::vector<KeyBinding>& bindings() {
    static const std::vector<KeyBinding> all = {
        bind<std::uint64_t>("seed", &TrainConfig::seed),
        bind<std::size_t>("steps", &TrainConfig::steps),
        bind<std::size_t>("batch_size", &TrainConfig::batch_size),
        bind<std::size_t>("checkpoint_every", &TrainConfig::checkpoint_every),
        bind<double>("lr", &TrainConfig::lr),
        bind<double>("weight_decay", &TrainConfig::weight_decay),
        bind<double>("beta1", &TrainConfig::beta1),
        bind<double>("beta2", &TrainConfig::beta2),
        bind<double>("max_grad_norm", &TrainConfig::max_grad_norm),
        bind<bool>("cosine_lr", &TrainConfig::cosine_lr),
        bind<std::size_t>("warmup_steps", &TrainConfig::warmup_steps),
        bind<double>("lr_floor_fraction", &TrainConfig::lr_floor_fraction),
        bind<double>("template_embedding_lr_mult", &TrainConfig::template_embedding_lr_mult),
        bind<double>("template_embedding_warm_fraction",
                     &TrainConfig::template_embedding_warm_fraction),
        bind_model<std::size_t>("points", &ModelConfig::points),
        bind_model<std::size_t>("feature_dim", &ModelConfig::feature_dim),
        bind_model<std::size_t>("layers", &ModelConfig::layers),
        bind_model<std::size_t>("templates", &ModelConfig::templates),
        bind_model<std::size_t>("template_points", &ModelConfig::template_points),
        bind_model<std::size_t>("knn_k", &ModelConfig::knn_k),
        bind_model<double>("gumbel_temperature", &ModelConfig::gumbel_temperature),
        bind_model<double>("template_embedding_std", &ModelConfig::template_embedding_std),
        bind_model<double>("trans_reverse_weight", &ModelConfig::trans_reverse_weight),
        bind_model<double>("trans_reverse_ramp_start", &ModelConfig::trans_reverse_ramp_start),
        bind_model<bool>("use_template_generation", &ModelConfig::use_template_generation),
        bind_model<bool>("use_tc_loss", &ModelConfig::use_tc_loss),
        bind_model<bool>("use_selector", &ModelConfig::use_selector),
        bind_model<bool>("use_fusion", &ModelConfig::use_fusion),
        bind_model<bool>("use_trans_loss", &ModelConfig::use_trans_loss),
        bind_model<bool>("align_templates", &ModelConfig::align_templates),
        bind_model<bool>("fusion_detaches_embeddings", &ModelConfig::fusion_detaches_embeddings),
        bind_model<bool>("encoder_absolute_coords", &ModelConfig::encoder_absolute_coords),
        bind_weight("lambda_trans", &LossWeights::trans),
        bind_weight("lambda_align", &LossWeights::align),
        bind_weight("lambda_tc", &LossWeights::tc),
        bind_weight("lambda_constr", &LossWeights::constr),
    };
    return all;
}

void validate(const TrainConfig& c) {
    std::vector<std::string> problems;
    auto positive = [&](std::size_t v, const char* key) {
        if (v == 0) problems.push_back(std::string(key) + " must be positive");
    };
    positive(c.model.points, "points");
    positive(c.model.feature_dim, "feature_dim");
    positive(c.model.layers, "layers");
    positive(c.model.templates, "templates");
    positive(c.model.template_points, "template_points");
    positive(c.model.knn_k, "knn_k");
    positive(c.batch_size, "batch_size");
    if (c.model.gumbel_temperature <= 0.0)
        problems.push_back("gumbel_temperature must be positive");
    if (c.model.template_embedding_std <= 0.0)
        problems.push_back("template_embedding_std must be positive");
    if (c.lr <= 0.0) problems.push_back("lr must be positive");
    if (c.weight_decay < 0.0) problems.push_back("weight_decay must be nonnegative");
    if (c.max_grad_norm < 0.0) problems.push_back("max_grad_norm must be nonnegative");
    for (auto [v, key] : {std::pair<double, const char*>{c.weights.trans, "lambda_trans"},
                          {c.weights.align, "lambda_align"},
                          {c.weights.tc, "lambda_tc"},
                          {c.weights.constr, "lambda_constr"}})
        if (v < 0.0) problems.push_back(std::string(key) + " must be nonnegative");
    if (c.model.knn_k >= c.model.points)
        problems.push_back("knn_k must be smaller than points");
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const std::string& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
}

}  // namespace

TrainConfig profile_config(const std::string& name) {
    TrainConfig c;
    if (name == "desk") {
        // CPU-scale calibration: short schedules need a hotter rate, a lighter
        // trans weight, and an accelerated template bank (see README).
        c.lr = 2e-3;
        c.steps = 1000;
        c.weights.trans = 0.12;
        c.template_embedding_lr_mult = 32.0;
        return c;
    }
    if (name == "paper") {
        c.model.points = 1024;
        c.model.feature_dim = 512;
        c.model.layers = 4;
        c.model.templates = 4;
        c.model.template_points = 1024;
        c.batch_size = 4;
        c.steps = 20000;
        return c;
    }
    throw ConfigError("unknown profile '" + name + "' (expected 'desk' or 'paper')");
}

std::string profile_of(const nlohmann::json& doc) {
    if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
    if (!doc.contains("profile")) return "desk";
    if (!doc["profile"].is_string()) throw ConfigError("invalid config:\n  - profile: expected a string");
    return doc["profile"].get<std::string>();
}

TrainConfig parse_config(const nlohmann::json& doc) {
    const std::string profile = profile_of(doc);
    TrainConfig config = profile_config(profile);
    std::vector<std::string> problems;
    for (const auto& [key, value] : doc.items()) {
        if (key == "profile") continue;
        const KeyBinding* binding = nullptr;
        for (const KeyBinding& b : bindings())
            if (b.key == key) {
                binding = &b;
                break;
            }
        if (!binding) {
            problems.push_back(key + ": unknown key");
            continue;
        }
        try {
            binding->apply(config, value);
        } catch (const json::exception&) {
            problems.push_back(key + ": wrong value type (" + value.dump() + ")");
        }
    }
    if (!problems.empty()) {
        std::string msg = "invalid config:";
        for (const std::string& p : problems) msg += "\n  - " + p;
        throw ConfigError(msg);
    }
    validate(config);
    return config;
}

TrainConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

nlohmann::json config_to_json(const TrainConfig& config, const std::string& profile) {
    json out;
    out["profile"] = profile;
    for (const KeyBinding& b : bindings()) out[b.key] = b.echo(config);
    return out;
}

}  // namespace tacorr
