#include "tacorr/gradcheck.hpp"
#include "tacorr/pipeline.hpp"

namespace tacorr {

namespace {

Tensor rnd(Shape s, Rng& rng, double scale = 1.0) {
    return Tensor::uniform(std::move(s), -scale, scale, rng);
}

PointCloud random_cloud(std::size_t n, Rng& rng) {
    PointCloud c;
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    c.positions.resize(n);
    for (Vec3& p : c.positions) p = {u(rng), u(rng), u(rng)};
    return normalize(c);
}

// Scalarize a tensor output with fixed random weights so every entry of the
// upstream gradient is exercised.
Var weighted_sum(Tape& tape, Var out, const Tensor& weights) {
    return tape.sum_all(tape.mul(out, tape.constant(weights)));
}

using Entry = GradCheckEntry;

FdOptions opts_full(double corrupt) {
    FdOptions o;
    o.corrupt = corrupt;
    return o;
}

FdOptions opts_sampled(Rng& rng, int coords, double corrupt) {
    FdOptions o;
    o.max_coords_per_tensor = coords;
    o.rng = &rng;
    o.corrupt = corrupt;
    return o;
}

// Micro model instance shared by the composed checks.
struct MicroSetup {
    Model model;
    ShapePair pair;
};

MicroSetup micro_instance(std::uint64_t seed) {
    Rng rng(seed * 7919 + 13);
    ModelConfig cfg;
    cfg.points = 6;
    cfg.feature_dim = 8;
    cfg.layers = 1;
    cfg.templates = 2;
    cfg.template_points = 6;
    cfg.knn_k = 3;
    // Fixed template: eval selection is piecewise constant and the hard
    // Gumbel estimator is biased, so neither has a finite-difference oracle.
    cfg.use_selector = false;
    MicroSetup s{Model::init(cfg, {random_cloud(6, rng), random_cloud(6, rng)}, rng), {}};
    s.pair.source = random_cloud(6, rng);
    s.pair.target = random_cloud(6, rng);
    // Training-scale embedding init (sigma 0.02) puts latent-kNN similarities
    // within h of each other, so probes would hop across neighbor sets. The
    // check needs a well-conditioned instance, not the training init.
    for (ShapeTemplate& t : s.model.bank.templates)
        for (double& v : t.embeddings.value.values) v *= 25.0;
    return s;
}

double composed_loss_check(std::uint64_t seed, double corrupt, const LossWeights& weights,
                           bool encoder_params) {
    MicroSetup s = micro_instance(seed);
    TotalLossOptions base;
    base.routing = SelectorRouting::Deterministic;
    // Detached targets are held at their unperturbed values: the derivative
    // under test is the one the stop-gradients define.
    Tensor frozen_transitive, frozen_direct;
    {
        Tape tape;
        TotalLoss tl = total_loss(tape, s.model, s.pair, weights, base);
        frozen_transitive = tl.transitive_target;
        frozen_direct = tl.direct_target;
    }
    TotalLossOptions frozen = base;
    if (frozen_transitive.size() > 0) {
        frozen.frozen_transitive_target = &frozen_transitive;
        frozen.frozen_direct_target = &frozen_direct;
    }
    auto loss = [&] {
        Tape tape;
        return total_loss(tape, s.model, s.pair, weights, frozen).breakdown.total;
    };
    auto grads = [&] {
        Tape tape;
        TotalLoss tl = total_loss(tape, s.model, s.pair, weights, frozen);
        tape.backward(tl.loss);
    };
    std::vector<Parameter*> params;
    if (encoder_params) {
        params = s.model.encoder_parameters();
    } else {
        // Stop-gradient makes the tape derivative of the detached align/tc
        // paths differ from the total derivative for encoder parameters;
        // those are exercised by the encoder-path variant instead.
        for (Parameter* p : s.model.parameters()) {
            const bool is_encoder = p->name.rfind("encoder.", 0) == 0;
            if (!is_encoder) params.push_back(p);
        }
    }
    Rng coords_rng(seed + 17);
    FdOptions o = opts_sampled(coords_rng, 6, corrupt);
    o.noise_floor = 1e-6;  // below f64 central-difference resolution here
    return fd_check_params(loss, grads, params, o);
}

}  // namespace

const std::vector<GradCheckEntry>& gradcheck_registry() {
    static const std::vector<Entry> entries = {
        {"add",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), b = rnd({3, 4}, rng), w = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.add(v[0], v[1]), w);
                 },
                 {a, b}, opts_full(corrupt));
         }},
        {"sub",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), b = rnd({3, 4}, rng), w = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.sub(v[0], v[1]), w);
                 },
                 {a, b}, opts_full(corrupt));
         }},
        {"mul",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), b = rnd({3, 4}, rng), w = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.mul(v[0], v[1]), w);
                 },
                 {a, b}, opts_full(corrupt));
         }},
        {"divide",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), w = rnd({3, 4}, rng);
             Tensor b = Tensor::uniform({3, 4}, 0.5, 2.0, rng);  // away from zero
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.divide(v[0], v[1]), w);
                 },
                 {a, b}, opts_full(corrupt));
         }},
        {"scale",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), w = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.scale(v[0], -1.7), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"scale_by",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), s = rnd({1}, rng), w = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.scale_by(v[0], v[1]), w);
                 },
                 {a, s}, opts_full(corrupt));
         }},
        {"add_rowvec",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), r = rnd({1, 4}, rng), w = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.add_rowvec(v[0], v[1]), w);
                 },
                 {a, r}, opts_full(corrupt));
         }},
        {"gelu",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng, 2.0), w = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.gelu(v[0]), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"sqrt_elem",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = Tensor::uniform({3, 4}, 0.2, 3.0, rng), w = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.sqrt_elem(v[0]), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"safe_log",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = Tensor::uniform({3, 4}, 0.05, 2.0, rng), w = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.safe_log(v[0]), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"reshape",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), w = rnd({2, 6}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.reshape(v[0], {2, 6}), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"concat_scalars",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({1}, rng), b = rnd({1}, rng), c = rnd({1}, rng), w = rnd({3}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.concat_scalars({v[0], v[1], v[2]}), w);
                 },
                 {a, b, c}, opts_full(corrupt));
         }},
        {"pick",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({5}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) { return t.pick(v[0], 2); }, {a},
                 opts_full(corrupt));
         }},
        {"matmul",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), b = rnd({4, 2}, rng), w = rnd({3, 2}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.matmul(v[0], v[1]), w);
                 },
                 {a, b}, opts_full(corrupt));
         }},
        {"transpose",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng), w = rnd({4, 3}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.transpose(v[0]), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"sum_all",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) { return t.sum_all(v[0]); }, {a},
                 opts_full(corrupt));
         }},
        {"mean_all",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) { return t.mean_all(v[0]); }, {a},
                 opts_full(corrupt));
         }},
        {"colmax",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({4, 3}, rng), w = rnd({1, 3}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.colmax(v[0]), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"colmean",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({4, 3}, rng), w = rnd({1, 3}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.colmean(v[0]), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"rowgroup_max",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({6, 3}, rng), w = rnd({2, 3}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.rowgroup_max(v[0], 3), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"softmax_rows",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 5}, rng, 2.0), w = rnd({3, 5}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.softmax_rows(v[0]), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"gumbel_softmax",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({4}, rng, 1.5), w = rnd({4}, rng);
             // Soft path, no noise: the hard straight-through estimator is
             // biased by construction and has no finite-difference oracle.
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.gumbel_softmax(v[0], 0.7, false, nullptr), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"smooth_l1",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 4}, rng, 2.0), b = rnd({3, 4}, rng, 2.0);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) { return t.smooth_l1(v[0], v[1]); },
                 {a, b}, opts_full(corrupt));
         }},
        {"cross_entropy_rows",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor logits = rnd({3, 5}, rng, 2.0);
             // Row-stochastic target held constant; gradient reaches logits only.
             Tensor target = rnd({3, 5}, rng, 1.0);
             for (std::size_t i = 0; i < 3; ++i) {
                 double z = 0.0;
                 for (std::size_t j = 0; j < 5; ++j) {
                     double& x = target.values[i * 5 + j];
                     x = std::exp(x);
                     z += x;
                 }
                 for (std::size_t j = 0; j < 5; ++j) target.values[i * 5 + j] /= z;
             }
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return t.cross_entropy_rows(t.constant(target), v[0]);
                 },
                 {logits}, opts_full(corrupt));
         }},
        {"chamfer",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor x = rnd({5, 3}, rng), y = rnd({6, 3}, rng);
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) { return t.chamfer(v[0], v[1]); },
                 {x, y}, opts_full(corrupt));
         }},
        {"gather_cols_per_row",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor a = rnd({3, 5}, rng), w = rnd({3, 2}, rng);
             std::vector<int> idx = {4, 0, 1, 3, 2, 2};
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.gather_cols_per_row(v[0], idx, 2), w);
                 },
                 {a}, opts_full(corrupt));
         }},
        {"weighted_gather_positions",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             Tensor wgt = rnd({3, 2}, rng), pos = rnd({4, 3}, rng), w = rnd({3, 3}, rng);
             std::vector<int> idx = {3, 0, 1, 2, 0, 2};
             return fd_check_leaves(
                 [&](Tape& t, const std::vector<Var>& v) {
                     return weighted_sum(t, t.weighted_gather_positions(v[0], idx, v[1]), w);
                 },
                 {wgt, pos}, opts_full(corrupt));
         }},
        {"attention_block",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             AttentionBlockParams p = AttentionBlockParams::init("gc", 6, rng);
             Tensor qin = rnd({4, 6}, rng), kvin = rnd({5, 6}, rng), w = rnd({4, 6}, rng);
             auto loss = [&] {
                 Tape t;
                 Var out = attention_block(t, t.constant(qin), t.constant(kvin), p);
                 return t.value(weighted_sum(t, out, w)).values[0];
             };
             auto grads = [&] {
                 Tape t;
                 Var out = attention_block(t, t.constant(qin), t.constant(kvin), p);
                 t.backward(weighted_sum(t, out, w));
             };
             std::vector<Parameter*> params;
             p.collect(params);
             Rng crng(seed + 5);
             return fd_check_params(loss, grads, params, opts_sampled(crng, 8, corrupt));
         }},
        {"encoder",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             EncoderParams p = EncoderParams::init(8, 2, 3, rng);
             PointCloud cloud = random_cloud(8, rng);
             Tensor w = rnd({8, 8}, rng);
             auto loss = [&] {
                 Tape t;
                 return t.value(weighted_sum(t, encode(t, cloud, p), w)).values[0];
             };
             auto grads = [&] {
                 Tape t;
                 t.backward(weighted_sum(t, encode(t, cloud, p), w));
             };
             std::vector<Parameter*> params;
             p.collect(params);
             Rng crng(seed + 5);
             return fd_check_params(loss, grads, params, opts_sampled(crng, 8, corrupt));
         }},
        {"space_aligner",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             AlignerParams p = AlignerParams::init(6, rng);
             Tensor feats = rnd({5, 6}, rng), w = rnd({5, 3}, rng);
             auto loss = [&] {
                 Tape t;
                 return t.value(weighted_sum(t, space_aligner(t, t.constant(feats), p), w))
                     .values[0];
             };
             auto grads = [&] {
                 Tape t;
                 t.backward(weighted_sum(t, space_aligner(t, t.constant(feats), p), w));
             };
             std::vector<Parameter*> params;
             p.collect(params);
             Rng crng(seed + 5);
             return fd_check_params(loss, grads, params, opts_sampled(crng, 8, corrupt));
         }},
        {"correlation_fusion",
         [](std::uint64_t seed, double corrupt) {
             Rng rng(seed);
             FusionParams p = FusionParams::init(8, 5, rng);
             Tensor feats = rnd({6, 8}, rng), emb = rnd({5, 8}, rng), w = rnd({6, 8}, rng);
             auto build = [&](Tape& t, const std::vector<Var>& v) {
                 return weighted_sum(t, correlation_fusion(t, v[0], v[1], p), w);
             };
             const double leaves = fd_check_leaves(build, {feats, emb}, opts_full(corrupt));
             auto loss = [&] {
                 Tape t;
                 return t
                     .value(build(t, {t.constant(feats), t.constant(emb)}))
                     .values[0];
             };
             auto grads = [&] {
                 Tape t;
                 t.backward(build(t, {t.leaf(feats, false), t.leaf(emb, false)}));
             };
             std::vector<Parameter*> params;
             p.collect(params);
             Rng crng(seed + 5);
             const double ps = fd_check_params(loss, grads, params, opts_sampled(crng, 8, 0.0));
             return std::max(leaves, ps);
         }},
        {"total_loss(non-encoder)",
         [](std::uint64_t seed, double corrupt) {
             return composed_loss_check(seed, corrupt, LossWeights{}, false);
         }},
        {"total_loss(encoder-path)",
         [](std::uint64_t seed, double corrupt) {
             // align/tc run on detached encoder features; with them off the
             // tape gradient of every encoder parameter is the total
             // derivative (trans + constr routes).
             LossWeights w;
             w.align = 0.0;
             w.tc = 0.0;
             return composed_loss_check(seed, corrupt, w, true);
         }},
    };
    return entries;
}

}  // namespace tacorr
