#pragma once

#include <vector>

#include "tacorr/blocks.hpp"
#include "tacorr/geometry.hpp"

namespace tacorr {

// Per-point feature extractor: a local-frame MLP max-pooled over the k nearest
// Euclidean neighbors, then L self-attention blocks for global context.
struct EncoderParams {
    std::size_t feature_dim = 64;
    std::size_t layers = 2;
    std::size_t knn_k = 10;
    // Ablation switch: when false the absolute-coordinate half of the local
    // frame is zeroed, making features translation-invariant.
    bool use_absolute_coords = true;

    Parameter W_in1, b_in1, W_in2, b_in2;
    std::vector<AttentionBlockParams> blocks;

    static EncoderParams init(std::size_t feature_dim, std::size_t layers, std::size_t knn_k,
                              Rng& rng);
    void collect(std::vector<Parameter*>& out);
};

// cloud must be normalized (centroid at origin, max norm <= 1). Output N x d.
Var encode(Tape& tape, const PointCloud& cloud, EncoderParams& params);

}  // namespace tacorr
