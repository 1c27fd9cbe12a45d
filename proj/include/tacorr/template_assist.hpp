#pragma once

#include <vector>

#include "tacorr/template_gen.hpp"

namespace tacorr {

// 0.5 * (column max + column mean): a permutation-invariant global summary.
Var mix_pool(Tape& tape, Var feats);
Tensor mix_pool(const Tensor& feats);

Var cosine_similarity(Tape& tape, Var u, Var v);  // u, v: 1 x d -> {1}

// Per-template selection score: cosine semantic affinity of mix-pooled
// features against both clouds plus negated chamfer geometric affinity.
double selector_score(const ShapeTemplate& t, const PointCloud& x, const PointCloud& y,
                      const Tensor& feats_x, const Tensor& feats_y);

// Deterministic eval-mode selection: argmax score, ties to the lower index.
std::size_t select_template_eval(const TemplateBank& bank, const PointCloud& x,
                                 const PointCloud& y, const Tensor& feats_x,
                                 const Tensor& feats_y);

// Train-mode selection: scores built on the tape, hard Gumbel-Softmax over
// them. weight is the chosen one-hot component (forward value 1) so that
// multiplying the template contribution routes gradient into the scores.
struct SelectorChoice {
    std::size_t index = 0;
    Var weight;       // invalid when straight-through is off
    Var score_vector; // invalid when straight-through is off
};

SelectorChoice select_template_train(Tape& tape, TemplateBank& bank, const PointCloud& x,
                                     const PointCloud& y, Var feats_x, Var feats_y, double tau,
                                     Rng& rng);

// Correlation fusion: project the point-template correlation matrix to d,
// mix it across points with attention keyed on point features, then a
// residual output MLP.
struct FusionParams {
    std::size_t feature_dim = 0;
    std::size_t template_points = 0;
    Parameter Wc, bc;          // N_T -> d correlation projection
    Parameter Wq, bq, Wk;      // attention projections (no key bias)
    Parameter W1, b1, W2, b2;  // output MLP

    static FusionParams init(std::size_t feature_dim, std::size_t template_points, Rng& rng);
    void collect(std::vector<Parameter*>& out);
};

Var correlation_fusion(Tape& tape, Var feats, Var template_embeddings, FusionParams& params);

// Eq. 4: raw dot-product similarity logits.
Var direct_similarity(Tape& tape, Var fused_x, Var fused_y);

// softmax_rows(F'_X F_T^T) . softmax_rows(F_T F'_Y^T): row-stochastic.
Var transitive_similarity(Tape& tape, Var fused_x, Var template_embeddings, Var fused_y);

// Symmetric consistency: CE(sg(S_XTY), S_XY) pulls the direct similarity
// toward the template-transmitted one, and CE(sg(softmax(S_XY)), S_XTY)
// trains the transitive path toward the direct one. Each target side is
// detached, so the pressure is mutual but never self-referential.
// reverse_weight scales the second direction relative to the first; it does
// not touch the direct logits, so it can be strong without dragging them.
Var transitive_loss(Tape& tape, Var s_xty, Var s_xy, double reverse_weight = 1.0);

}  // namespace tacorr
