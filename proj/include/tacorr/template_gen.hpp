#pragma once

#include <array>
#include <vector>

#include "tacorr/blocks.hpp"
#include "tacorr/geometry.hpp"

namespace tacorr {

// One learnable explicit shape template: positions plus embeddings.
struct ShapeTemplate {
    Parameter positions;   // N_T x 3
    Parameter embeddings;  // N_T x d
};

struct TemplateBank {
    std::size_t count = 0;            // K
    std::size_t template_points = 0;  // N_T
    std::size_t feature_dim = 0;      // d
    std::vector<ShapeTemplate> templates;

    void collect(std::vector<Parameter*>& out);
};

// Positions copied from K seed clouds drawn without replacement (with
// replacement when the list is shorter than K), resampled to N_T points;
// embeddings ~ N(0, embedding_std^2).
TemplateBank init_bank(std::size_t K, std::size_t N_T, std::size_t d,
                       const std::vector<PointCloud>& seed_clouds, Rng& rng,
                       double embedding_std = 0.02);

// Two self-attention blocks and a linear head mapping embeddings to
// predicted point positions (M x d -> M x 3).
struct AlignerParams {
    std::size_t feature_dim = 0;
    std::array<AttentionBlockParams, 2> blocks;
    Parameter W_head, b_head;

    static AlignerParams init(std::size_t feature_dim, Rng& rng);
    void collect(std::vector<Parameter*>& out);
};

Var space_aligner(Tape& tape, Var feats, AlignerParams& params);

// SmoothL1 between true and aligner-predicted positions. Callers are
// responsible for detaching encoder features first (stop-gradient contract).
Var align_loss(Tape& tape, Var true_positions, Var feats, AlignerParams& params);

// Eq.-1-style construction: each query row becomes a softmax-weighted convex
// combination of the positions of its k latent nearest reference rows.
struct Construction {
    Var positions;             // N x 3
    Var weights;               // N x k, rows sum to 1
    std::vector<int> indices;  // row-major N x k neighbor table
    std::size_t k = 0;
};

Construction latent_construct(Tape& tape, Var query_feats, Var ref_feats, Var ref_positions,
                              std::size_t k, bool exclude_self = false);

// CD(P_T, T_hat_X) + CD(P_T, T_hat_Y). Pass detached encoder features;
// gradients reach template positions and embeddings only.
Var template_construction_loss(Tape& tape, Var template_positions, Var template_embeddings,
                               Var feats_x_detached, Var feats_y_detached, std::size_t k);

}  // namespace tacorr
