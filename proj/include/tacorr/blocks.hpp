#pragma once

#include <vector>

#include "tacorr/tape.hpp"

namespace tacorr {

// Single-head scaled dot-product attention with residual, followed by a
// two-layer feed-forward sublayer with residual:
//   h   = q_in + softmax(Q K^T / sqrt(d)) V
//   out = h + W2 gelu(W1 h + b1) + b2
// Q, K, V are learned projections of q_in / kv_in.
struct AttentionBlockParams {
    Parameter Wq, bq, Wk, Wv, bv;  // key bias omitted: a no-op under row softmax
    Parameter W1, b1, W2, b2;

    static AttentionBlockParams init(const std::string& prefix, std::size_t dim, Rng& rng);
    void collect(std::vector<Parameter*>& out);
};

Var linear(Tape& tape, Var x, Parameter& W, Parameter& b);

Var attention_block(Tape& tape, Var q_in, Var kv_in, AttentionBlockParams& p);

// N(0, 1/sqrt(fan_in)) weight init; biases zero.
Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace tacorr
