#include "tacorr/blocks.hpp"

#include <cmath>

namespace tacorr {

Tensor init_weight(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    return Tensor::randn({fan_in, fan_out}, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

AttentionBlockParams AttentionBlockParams::init(const std::string& prefix, std::size_t dim,
                                                Rng& rng) {
    AttentionBlockParams p;
    p.Wq = Parameter(prefix + ".Wq", init_weight(dim, dim, rng));
    p.bq = Parameter(prefix + ".bq", Tensor::zeros({1, dim}));
    p.Wk = Parameter(prefix + ".Wk", init_weight(dim, dim, rng));
    p.Wv = Parameter(prefix + ".Wv", init_weight(dim, dim, rng));
    p.bv = Parameter(prefix + ".bv", Tensor::zeros({1, dim}));
    p.W1 = Parameter(prefix + ".W1", init_weight(dim, dim, rng));
    p.b1 = Parameter(prefix + ".b1", Tensor::zeros({1, dim}));
    p.W2 = Parameter(prefix + ".W2", init_weight(dim, dim, rng));
    p.b2 = Parameter(prefix + ".b2", Tensor::zeros({1, dim}));
    return p;
}

void AttentionBlockParams::collect(std::vector<Parameter*>& out) {
    for (Parameter* p : {&Wq, &bq, &Wk, &Wv, &bv, &W1, &b1, &W2, &b2}) out.push_back(p);
}

Var linear(Tape& tape, Var x, Parameter& W, Parameter& b) {
    return tape.add_rowvec(tape.matmul(x, tape.param(W)), tape.param(b));
}

Var attention_block(Tape& tape, Var q_in, Var kv_in, AttentionBlockParams& p) {
    const Tensor& tq = tape.value(q_in);
    const Tensor& tkv = tape.value(kv_in);
    tq.require_rank2("attention_block");
    tkv.require_rank2("attention_block");
    if (tq.cols() != tkv.cols())
        throw DimensionError("attention_block: feature dims disagree " + shape_str(tq.shape) +
                             " vs " + shape_str(tkv.shape));
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(tq.cols()));
    Var q = linear(tape, q_in, p.Wq, p.bq);
    Var k = tape.matmul(kv_in, tape.param(p.Wk));
    Var v = linear(tape, kv_in, p.Wv, p.bv);
    Var attn = tape.softmax_rows(tape.scale(tape.matmul(q, tape.transpose(k)), inv_sqrt_d));
    Var h = tape.add(q_in, tape.matmul(attn, v));
    Var ffn = linear(tape, tape.gelu(linear(tape, h, p.W1, p.b1)), p.W2, p.b2);
    return tape.add(h, ffn);
}

}  // namespace tacorr
