#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <vector>

#include "tacorr/tensor.hpp"

namespace tacorr {

// Handle into a Tape. Only valid for the tape that created it.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape. Records ops in execution order; backward() walks
// the record in reverse and accumulates into bound Parameters. Tapes are
// single-use (one backward) and single-threaded.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // -- leaves ------------------------------------------------------------
    Var leaf(Tensor v, bool requires_grad = false);
    Var constant(Tensor v) { return leaf(std::move(v), false); }
    Var scalar(double v) { return leaf(Tensor::scalar(v), false); }
    // Binds p.value; after backward() the leaf gradient is added to p.grad.
    // Binding the same Parameter twice returns the same leaf.
    Var param(Parameter& p);
    // Value copy with the graph edge severed.
    Var detach(Var a);

    // -- elementwise / structural -------------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var divide(Var a, Var b);
    Var scale(Var a, double c);
    Var scale_by(Var a, Var s);  // s: shape {1}
    Var add_rowvec(Var a, Var r);  // a: n x m, r: 1 x m
    Var gelu(Var a);
    Var sqrt_elem(Var a);
    // log(max(a, floor)); zero gradient below the floor.
    Var safe_log(Var a, double floor = 1e-12);
    Var reshape(Var a, Shape s);
    Var concat_scalars(const std::vector<Var>& parts);  // K scalars -> {K}
    Var pick(Var v, std::size_t index);  // 1-D vector component -> {1}

    // -- linear algebra -----------------------------------------------------
    Var matmul(Var a, Var b);
    Var transpose(Var a);

    // -- reductions -----------------------------------------------------------
    Var sum_all(Var a);
    Var mean_all(Var a);
    Var colmax(Var a);   // n x m -> 1 x m
    Var colmean(Var a);  // n x m -> 1 x m
    // (n*g) x m -> n x m, max over each consecutive group of g rows.
    Var rowgroup_max(Var a, std::size_t group);

    // -- softmax family -------------------------------------------------------
    Var softmax_rows(Var a);
    // Soft: softmax((logits + g)/tau). Hard: one-hot(argmax) forward with the
    // soft Jacobian as straight-through gradient. rng == nullptr draws no noise.
    Var gumbel_softmax(Var logits, double tau, bool hard, Rng* rng);

    // -- losses ----------------------------------------------------------------
    Var smooth_l1(Var pred, Var target);  // beta = 1, mean over elements
    // target rows must sum to 1 (within 1e-5); gradient reaches logits only.
    Var cross_entropy_rows(Var target, Var logits);
    // Squared-distance chamfer with per-cloud means; gradient flows through
    // the argmin pairs into both position sets.
    Var chamfer(Var x_positions, Var y_positions);

    // -- gather/scatter ---------------------------------------------------------
    // out[i,j] = s[i, idx[i*k+j]] for s: n x m, idx row-major n x k.
    Var gather_cols_per_row(Var s, const std::vector<int>& idx, std::size_t k);
    // out[i,:] = sum_j w[i,j] * p[idx[i*k+j],:] for w: n x k, p: m x c.
    Var weighted_gather_positions(Var w, const std::vector<int>& idx, Var p);

    // -- execution ----------------------------------------------------------------
    const Tensor& value(Var v) const { return nodes_.at(check(v)).value; }
    const Tensor& grad(Var v) const;
    // root must hold a single value; seed scales the whole gradient (use 1/B
    // for batch averaging). Single call per tape.
    void backward(Var root, double seed = 1.0);

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // allocated only when requires_grad
        bool requires_grad = false;
        std::vector<int> inputs;  // differentiable inputs only
        std::function<void()> backward;
        const char* op = "leaf";
        Parameter* bound = nullptr;
    };

    std::deque<Node> nodes_;  // reference stability for value()/grad()
    std::unordered_map<Parameter*, int> param_leaves_;
    bool backward_done_ = false;

    int check(Var v) const;
    Var push(Tensor value, std::vector<int> inputs, const char* op);
    Node& node(Var v) { return nodes_[check(v)]; }
    Tensor& grad_buf(int id) { return nodes_[id].grad; }
    const Tensor& val(int id) const { return nodes_[id].value; }

    void require_same_shape(Var a, Var b, const char* op) const;
};

// Latent-kNN row selection used by both neighbor search and constructions:
// indices of the k largest affinities, sorted by decreasing value with ties
// broken by lower index. exclude >= 0 removes that candidate.
std::vector<int> topk_desc(const double* affinity, std::size_t m, std::size_t k, int exclude = -1);

}  // namespace tacorr
