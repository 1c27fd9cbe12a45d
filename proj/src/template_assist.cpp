#include "tacorr/template_assist.hpp"

#include <cmath>

namespace tacorr {

Var mix_pool(Tape& tape, Var feats) {
    return tape.scale(tape.add(tape.colmax(feats), tape.colmean(feats)), 0.5);
}

Tensor mix_pool(const Tensor& feats) {
    feats.require_rank2("mix_pool");
    const std::size_t n = feats.rows(), d = feats.cols();
    if (n == 0) throw ParameterError("mix_pool: empty feature matrix");
    Tensor out = Tensor::zeros({1, d});
    for (std::size_t j = 0; j < d; ++j) {
        double mx = feats.values[j], mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double v = feats.values[i * d + j];
            mx = std::max(mx, v);
            mean += v;
        }
        out.values[j] = 0.5 * (mx + mean / static_cast<double>(n));
    }
    return out;
}

namespace {

constexpr double kCosineEps = 1e-12;

double cosine_plain(const Tensor& u, const Tensor& v) {
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u.values[i] * v.values[i];
        nu += u.values[i] * u.values[i];
        nv += v.values[i] * v.values[i];
    }
    return dot / (std::sqrt(nu) * std::sqrt(nv) + kCosineEps);
}

}  // namespace

Var cosine_similarity(Tape& tape, Var u, Var v) {
    if (!tape.value(u).same_shape(tape.value(v)))
        throw DimensionError("cosine_similarity: shape mismatch");
    Var dot = tape.sum_all(tape.mul(u, v));
    Var nu = tape.sqrt_elem(tape.sum_all(tape.mul(u, u)));
    Var nv = tape.sqrt_elem(tape.sum_all(tape.mul(v, v)));
    Var denom = tape.add(tape.mul(nu, nv), tape.scalar(kCosineEps));
    return tape.divide(dot, denom);
}

double selector_score(const ShapeTemplate& t, const PointCloud& x, const PointCloud& y,
                      const Tensor& feats_x, const Tensor& feats_y) {
    const Tensor pooled_t = mix_pool(t.embeddings.value);
    const double semantic =
        cosine_plain(pooled_t, mix_pool(feats_x)) + cosine_plain(pooled_t, mix_pool(feats_y));
    const PointCloud tpl = PointCloud::from_tensor(t.positions.value);
    const double geometric = -(chamfer_distance(tpl, x) + chamfer_distance(tpl, y));
    return semantic + geometric;
}

std::size_t select_template_eval(const TemplateBank& bank, const PointCloud& x,
                                 const PointCloud& y, const Tensor& feats_x,
                                 const Tensor& feats_y) {
    if (bank.templates.empty()) throw ParameterError("select_template_eval: empty bank");
    std::size_t best = 0;
    double best_score = selector_score(bank.templates[0], x, y, feats_x, feats_y);
    for (std::size_t i = 1; i < bank.templates.size(); ++i) {
        const double s = selector_score(bank.templates[i], x, y, feats_x, feats_y);
        if (s > best_score) {
            best_score = s;
            best = i;
        }
    }
    return best;
}

SelectorChoice select_template_train(Tape& tape, TemplateBank& bank, const PointCloud& x,
                                     const PointCloud& y, Var feats_x, Var feats_y, double tau,
                                     Rng& rng) {
    if (bank.templates.empty()) throw ParameterError("select_template_train: empty bank");
    Var pooled_x = mix_pool(tape, feats_x);
    Var pooled_y = mix_pool(tape, feats_y);
    Var cloud_x = tape.constant(x.to_tensor());
    Var cloud_y = tape.constant(y.to_tensor());
    std::vector<Var> scores;
    scores.reserve(bank.templates.size());
    for (ShapeTemplate& t : bank.templates) {
        Var emb = tape.param(t.embeddings);
        Var pos = tape.param(t.positions);
        Var pooled_t = mix_pool(tape, emb);
        Var semantic = tape.add(cosine_similarity(tape, pooled_t, pooled_x),
                                cosine_similarity(tape, pooled_t, pooled_y));
        Var geometric =
            tape.scale(tape.add(tape.chamfer(pos, cloud_x), tape.chamfer(pos, cloud_y)), -1.0);
        scores.push_back(tape.add(semantic, geometric));
    }
    Var score_vec = tape.concat_scalars(scores);
    Var weights = tape.gumbel_softmax(score_vec, tau, /*hard=*/true, &rng);
    const Tensor& w = tape.value(weights);
    std::size_t index = 0;
    for (std::size_t i = 1; i < w.size(); ++i)
        if (w.values[i] > w.values[index]) index = i;
    SelectorChoice choice;
    choice.index = index;
    choice.weight = tape.pick(weights, index);
    choice.score_vector = score_vec;
    return choice;
}

FusionParams FusionParams::init(std::size_t feature_dim, std::size_t template_points, Rng& rng) {
    FusionParams p;
    p.feature_dim = feature_dim;
    p.template_points = template_points;
    p.Wc = Parameter("fusion.Wc", init_weight(template_points, feature_dim, rng));
    p.bc = Parameter("fusion.bc", Tensor::zeros({1, feature_dim}));
    p.Wq = Parameter("fusion.Wq", init_weight(feature_dim, feature_dim, rng));
    p.bq = Parameter("fusion.bq", Tensor::zeros({1, feature_dim}));
    p.Wk = Parameter("fusion.Wk", init_weight(feature_dim, feature_dim, rng));
    p.W1 = Parameter("fusion.W1", init_weight(feature_dim, feature_dim, rng));
    p.b1 = Parameter("fusion.b1", Tensor::zeros({1, feature_dim}));
    p.W2 = Parameter("fusion.W2", init_weight(feature_dim, feature_dim, rng));
    p.b2 = Parameter("fusion.b2", Tensor::zeros({1, feature_dim}));
    return p;
}

void FusionParams::collect(std::vector<Parameter*>& out) {
    for (Parameter* p : {&Wc, &bc, &Wq, &bq, &Wk, &W1, &b1, &W2, &b2}) out.push_back(p);
}

Var correlation_fusion(Tape& tape, Var feats, Var template_embeddings, FusionParams& params) {
    const Tensor& f = tape.value(feats);
    const Tensor& e = tape.value(template_embeddings);
    f.require_rank2("correlation_fusion");
    e.require_rank2("correlation_fusion");
    if (f.cols() != params.feature_dim || e.cols() != params.feature_dim ||
        e.rows() != params.template_points)
        throw DimensionError("correlation_fusion: dims disagree with parameters");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.feature_dim));
    // Correlation vectors, projected to feature width.
    Var corr = tape.matmul(feats, tape.transpose(template_embeddings));
    Var v = linear(tape, corr, params.Wc, params.bc);
    // Attention keyed on point features, values carry the correlation signal.
    Var q = linear(tape, feats, params.Wq, params.bq);
    Var k = tape.matmul(feats, tape.param(params.Wk));
    Var attn = tape.softmax_rows(tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_d));
    Var h = tape.add(feats, tape.matmul(attn, v));
    Var mlp = linear(tape, tape.gelu(linear(tape, h, params.W1, params.b1)), params.W2, params.b2);
    return tape.add(h, mlp);
}

Var direct_similarity(Tape& tape, Var fused_x, Var fused_y) {
    if (tape.value(fused_x).cols() != tape.value(fused_y).cols())
        throw DimensionError("direct_similarity: feature dims disagree");
    return tape.matmul(fused_x, tape.transpose(fused_y));
}

Var transitive_similarity(Tape& tape, Var fused_x, Var template_embeddings, Var fused_y) {
    Var s_xt = tape.softmax_rows(tape.matmul(fused_x, tape.transpose(template_embeddings)));
    Var s_ty = tape.softmax_rows(tape.matmul(template_embeddings, tape.transpose(fused_y)));
    return tape.matmul(s_xt, s_ty);
}

Var transitive_loss(Tape& tape, Var s_xty, Var s_xy, double reverse_weight) {
    Var direct_from_transitive = tape.cross_entropy_rows(tape.detach(s_xty), s_xy);
    // -mean_i sum_j sg(softmax(S_XY))_ij log S_XTY_ij
    Var direct_dist = tape.detach(tape.softmax_rows(s_xy));
    const std::size_t rows = tape.value(s_xty).rows();
    Var transitive_from_direct = tape.scale(
        tape.sum_all(tape.mul(direct_dist, tape.safe_log(s_xty))),
        -reverse_weight / static_cast<double>(rows));
    return tape.add(direct_from_transitive, transitive_from_direct);
}

}  // namespace tacorr
