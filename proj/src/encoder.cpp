#include "tacorr/encoder.hpp"

#include <cmath>

namespace tacorr {

EncoderParams EncoderParams::init(std::size_t feature_dim, std::size_t layers, std::size_t knn_k,
                                  Rng& rng) {
    if (layers < 1) throw ParameterError("EncoderParams: layer count must be >= 1");
    EncoderParams p;
    p.feature_dim = feature_dim;
    p.layers = layers;
    p.knn_k = knn_k;
    p.W_in1 = Parameter("encoder.W_in1", init_weight(6, feature_dim, rng));
    p.b_in1 = Parameter("encoder.b_in1", Tensor::zeros({1, feature_dim}));
    p.W_in2 = Parameter("encoder.W_in2", init_weight(feature_dim, feature_dim, rng));
    p.b_in2 = Parameter("encoder.b_in2", Tensor::zeros({1, feature_dim}));
    for (std::size_t l = 0; l < layers; ++l)
        p.blocks.push_back(AttentionBlockParams::init("encoder.block" + std::to_string(l),
                                                      feature_dim, rng));
    return p;
}

void EncoderParams::collect(std::vector<Parameter*>& out) {
    for (Parameter* p : {&W_in1, &b_in1, &W_in2, &b_in2}) out.push_back(p);
    for (AttentionBlockParams& b : blocks) b.collect(out);
}

Var encode(Tape& tape, const PointCloud& cloud, EncoderParams& params) {
    const std::size_t n = cloud.size(), k = params.knn_k;
    if (n < k) throw ParameterError("encode: cloud smaller than neighborhood size");
    // Local frame: per neighbor [point, neighbor - point], max-pooled per point.
    NeighborList nn = knn_euclidean(cloud, cloud, k);
    Tensor frames = Tensor::zeros({n * k, 6});
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& pi = cloud.positions[i];
        for (std::size_t j = 0; j < k; ++j) {
            const Vec3& pj = cloud.positions[static_cast<std::size_t>(nn.at(i, j))];
            double* row = frames.values.data() + (i * k + j) * 6;
            for (std::size_t c = 0; c < 3; ++c) {
                row[c] = params.use_absolute_coords ? pi[c] : 0.0;
                row[3 + c] = pj[c] - pi[c];
            }
        }
    }
    Var x = tape.constant(std::move(frames));
    x = linear(tape, x, params.W_in1, params.b_in1);
    x = tape.gelu(x);
    x = linear(tape, x, params.W_in2, params.b_in2);
    Var h = tape.rowgroup_max(x, k);
    for (AttentionBlockParams& block : params.blocks) h = attention_block(tape, h, h, block);
    return h;
}

}  // namespace tacorr
