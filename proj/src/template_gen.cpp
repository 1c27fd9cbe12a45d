#include "tacorr/template_gen.hpp"

#include <algorithm>
#include <numeric>

namespace tacorr {

void TemplateBank::collect(std::vector<Parameter*>& out) {
    for (ShapeTemplate& t : templates) {
        out.push_back(&t.positions);
        out.push_back(&t.embeddings);
    }
}

namespace {

Tensor resample_positions(const PointCloud& cloud, std::size_t n_t, Rng& rng) {
    Tensor out = Tensor::zeros({n_t, 3});
    std::vector<std::size_t> pick;
    if (cloud.size() == n_t) {
        pick.resize(n_t);
        std::iota(pick.begin(), pick.end(), 0);
    } else if (cloud.size() > n_t) {
        pick.resize(cloud.size());
        std::iota(pick.begin(), pick.end(), 0);
        std::shuffle(pick.begin(), pick.end(), rng);
        pick.resize(n_t);
        std::sort(pick.begin(), pick.end());
    } else {
        std::uniform_int_distribution<std::size_t> dist(0, cloud.size() - 1);
        pick.resize(n_t);
        for (std::size_t i = 0; i < cloud.size(); ++i) pick[i] = i;
        for (std::size_t i = cloud.size(); i < n_t; ++i) pick[i] = dist(rng);
    }
    for (std::size_t i = 0; i < n_t; ++i)
        for (std::size_t c = 0; c < 3; ++c) out.values[i * 3 + c] = cloud.positions[pick[i]][c];
    return out;
}

}  // namespace

TemplateBank init_bank(std::size_t K, std::size_t N_T, std::size_t d,
                       const std::vector<PointCloud>& seed_clouds, Rng& rng,
                       double embedding_std) {
    if (K == 0) throw ParameterError("init_bank: template count must be positive");
    if (seed_clouds.empty()) throw ParameterError("init_bank: empty seed cloud list");
    TemplateBank bank;
    bank.count = K;
    bank.template_points = N_T;
    bank.feature_dim = d;
    std::vector<std::size_t> order(seed_clouds.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i = 0; i < K; ++i) {
        const PointCloud& seed = seed_clouds[order[i % order.size()]];
        ShapeTemplate t;
        t.positions = Parameter("bank.t" + std::to_string(i) + ".positions",
                                resample_positions(seed, N_T, rng));
        t.embeddings = Parameter("bank.t" + std::to_string(i) + ".embeddings",
                                 Tensor::randn({N_T, d}, embedding_std, rng));
        bank.templates.push_back(std::move(t));
    }
    return bank;
}

AlignerParams AlignerParams::init(std::size_t feature_dim, Rng& rng) {
    AlignerParams p;
    p.feature_dim = feature_dim;
    p.blocks[0] = AttentionBlockParams::init("aligner.block0", feature_dim, rng);
    p.blocks[1] = AttentionBlockParams::init("aligner.block1", feature_dim, rng);
    p.W_head = Parameter("aligner.W_head", init_weight(feature_dim, 3, rng));
    p.b_head = Parameter("aligner.b_head", Tensor::zeros({1, 3}));
    return p;
}

void AlignerParams::collect(std::vector<Parameter*>& out) {
    blocks[0].collect(out);
    blocks[1].collect(out);
    out.push_back(&W_head);
    out.push_back(&b_head);
}

Var space_aligner(Tape& tape, Var feats, AlignerParams& params) {
    const Tensor& f = tape.value(feats);
    f.require_rank2("space_aligner");
    if (f.cols() != params.feature_dim)
        throw DimensionError("space_aligner: feature dim " + std::to_string(f.cols()) +
                             " != " + std::to_string(params.feature_dim));
    Var h = attention_block(tape, feats, feats, params.blocks[0]);
    h = attention_block(tape, h, h, params.blocks[1]);
    return linear(tape, h, params.W_head, params.b_head);
}

Var align_loss(Tape& tape, Var true_positions, Var feats, AlignerParams& params) {
    return tape.smooth_l1(space_aligner(tape, feats, params), true_positions);
}

Construction latent_construct(Tape& tape, Var query_feats, Var ref_feats, Var ref_positions,
                              std::size_t k, bool exclude_self) {
    const Tensor& q = tape.value(query_feats);
    const Tensor& r = tape.value(ref_feats);
    q.require_rank2("latent_construct");
    r.require_rank2("latent_construct");
    if (q.cols() != r.cols()) throw DimensionError("latent_construct: feature dims disagree");
    const std::size_t n = q.rows(), m = r.rows();
    if (k > m || (exclude_self && k > m - 1))
        throw ParameterError("latent_construct: k exceeds available neighbors");
    if (exclude_self && n != m)
        throw ContractError("latent_construct: self-exclusion needs matching row counts");
    Var sims = tape.matmul(query_feats, tape.transpose(ref_feats));
    const Tensor& s = tape.value(sims);
    Construction out;
    out.k = k;
    out.indices.reserve(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        auto row = topk_desc(s.values.data() + i * m, m, k,
                             exclude_self ? static_cast<int>(i) : -1);
        out.indices.insert(out.indices.end(), row.begin(), row.end());
    }
    out.weights = tape.softmax_rows(tape.gather_cols_per_row(sims, out.indices, k));
    out.positions = tape.weighted_gather_positions(out.weights, out.indices, ref_positions);
    return out;
}

Var template_construction_loss(Tape& tape, Var template_positions, Var template_embeddings,
                               Var feats_x_detached, Var feats_y_detached, std::size_t k) {
    Construction from_x =
        latent_construct(tape, feats_x_detached, template_embeddings, template_positions, k);
    Construction from_y =
        latent_construct(tape, feats_y_detached, template_embeddings, template_positions, k);
    return tape.add(tape.chamfer(template_positions, from_x.positions),
                    tape.chamfer(template_positions, from_y.positions));
}

}  // namespace tacorr
