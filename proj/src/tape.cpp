#include "tacorr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace tacorr {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

// C(n x m) += A(n x k) * B(k x m)
void mm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
           std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = b + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(n x k) += A(n x m) * B^T with B(k x m)
void mm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
           std::size_t k) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * m;
        double* crow = c + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double* brow = b + p * m;
            double acc = 0.0;
            for (std::size_t j = 0; j < m; ++j) acc += arow[j] * brow[j];
            crow[p] += acc;
        }
    }
}

// C(k x m) += A^T * B with A(n x k), B(n x m)
void mm_tn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
           std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * k;
        const double* brow = b + i * m;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            double* crow = c + p * m;
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;

}  // namespace

std::vector<int> topk_desc(const double* affinity, std::size_t m, std::size_t k, int exclude) {
    std::vector<int> order;
    order.reserve(m);
    for (std::size_t j = 0; j < m; ++j)
        if (static_cast<int>(j) != exclude) order.push_back(static_cast<int>(j));
    if (k > order.size())
        throw ParameterError("topk_desc: k exceeds candidate count");
    auto better = [&](int a, int b) {
        if (affinity[a] != affinity[b]) return affinity[a] > affinity[b];
        return a < b;
    };
    std::partial_sort(order.begin(), order.begin() + static_cast<long>(k), order.end(), better);
    order.resize(k);
    return order;
}

int Tape::check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
        throw ContractError("Tape: Var does not belong to this tape");
    return v.id;
}

const Tensor& Tape::grad(Var v) const {
    const Node& n = nodes_.at(check(v));
    if (!n.requires_grad) throw ContractError("Tape::grad: node does not require grad");
    return n.grad;
}

Var Tape::push(Tensor value, std::vector<int> inputs, const char* op) {
    if (!all_finite(value))
        throw NumericError(std::string("non-finite values produced by op '") + op + "'");
    Node n;
    n.value = std::move(value);
    n.inputs = std::move(inputs);
    n.op = op;
    for (int in : n.inputs)
        if (nodes_[in].requires_grad) n.requires_grad = true;
    if (n.requires_grad) n.grad = Tensor::zeros(n.value.shape);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor v, bool requires_grad) {
    if (!all_finite(v)) throw NumericError("non-finite values in leaf tensor");
    Node n;
    n.value = std::move(v);
    n.requires_grad = requires_grad;
    if (requires_grad) n.grad = Tensor::zeros(n.value.shape);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::param(Parameter& p) {
    auto it = param_leaves_.find(&p);
    if (it != param_leaves_.end()) return Var{it->second};
    Var v = leaf(p.value, true);
    nodes_[v.id].bound = &p;
    nodes_[v.id].op = "param";
    param_leaves_.emplace(&p, v.id);
    return v;
}

Var Tape::detach(Var a) { return leaf(val(check(a)), false); }

void Tape::require_same_shape(Var a, Var b, const char* op) const {
    const Tensor& ta = nodes_[check(a)].value;
    const Tensor& tb = nodes_[check(b)].value;
    if (!ta.same_shape(tb))
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(ta.shape) +
                             " vs " + shape_str(tb.shape));
}

Var Tape::add(Var a, Var b) {
    require_same_shape(a, b, "add");
    int ia = check(a), ib = check(b);
    Tensor out = val(ia);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] += val(ib).values[i];
    Var v = push(std::move(out), {ia, ib}, "add");
    int io = v.id;
    node(v).backward = [this, ia, ib, io] {
        const Tensor& g = grad_buf(io);
        if (nodes_[ia].requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) grad_buf(ia).values[i] += g.values[i];
        if (nodes_[ib].requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) grad_buf(ib).values[i] += g.values[i];
    };
    return v;
}

Var Tape::sub(Var a, Var b) {
    require_same_shape(a, b, "sub");
    int ia = check(a), ib = check(b);
    Tensor out = val(ia);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] -= val(ib).values[i];
    Var v = push(std::move(out), {ia, ib}, "sub");
    int io = v.id;
    node(v).backward = [this, ia, ib, io] {
        const Tensor& g = grad_buf(io);
        if (nodes_[ia].requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) grad_buf(ia).values[i] += g.values[i];
        if (nodes_[ib].requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) grad_buf(ib).values[i] -= g.values[i];
    };
    return v;
}

Var Tape::mul(Var a, Var b) {
    require_same_shape(a, b, "mul");
    int ia = check(a), ib = check(b);
    Tensor out = val(ia);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] *= val(ib).values[i];
    Var v = push(std::move(out), {ia, ib}, "mul");
    int io = v.id;
    node(v).backward = [this, ia, ib, io] {
        const Tensor& g = grad_buf(io);
        if (nodes_[ia].requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i)
                grad_buf(ia).values[i] += g.values[i] * val(ib).values[i];
        if (nodes_[ib].requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i)
                grad_buf(ib).values[i] += g.values[i] * val(ia).values[i];
    };
    return v;
}

Var Tape::divide(Var a, Var b) {
    require_same_shape(a, b, "divide");
    int ia = check(a), ib = check(b);
    Tensor out = val(ia);
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] /= val(ib).values[i];
    Var v = push(std::move(out), {ia, ib}, "divide");
    int io = v.id;
    node(v).backward = [this, ia, ib, io] {
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double bi = val(ib).values[i];
            if (nodes_[ia].requires_grad) grad_buf(ia).values[i] += g.values[i] / bi;
            if (nodes_[ib].requires_grad)
                grad_buf(ib).values[i] -= g.values[i] * val(ia).values[i] / (bi * bi);
        }
    };
    return v;
}

Var Tape::scale(Var a, double c) {
    int ia = check(a);
    Tensor out = val(ia);
    for (double& x : out.values) x *= c;
    Var v = push(std::move(out), {ia}, "scale");
    int io = v.id;
    node(v).backward = [this, ia, io, c] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < g.size(); ++i) grad_buf(ia).values[i] += c * g.values[i];
    };
    return v;
}

Var Tape::scale_by(Var a, Var s) {
    int ia = check(a), is = check(s);
    if (val(is).size() != 1) throw DimensionError("scale_by: scale must hold a single value");
    const double sv = val(is).values[0];
    Tensor out = val(ia);
    for (double& x : out.values) x *= sv;
    Var v = push(std::move(out), {ia, is}, "scale_by");
    int io = v.id;
    node(v).backward = [this, ia, is, io, sv] {
        const Tensor& g = grad_buf(io);
        if (nodes_[ia].requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) grad_buf(ia).values[i] += sv * g.values[i];
        if (nodes_[is].requires_grad) {
            double acc = 0.0;
            for (std::size_t i = 0; i < g.size(); ++i) acc += g.values[i] * val(ia).values[i];
            grad_buf(is).values[0] += acc;
        }
    };
    return v;
}

Var Tape::add_rowvec(Var a, Var r) {
    int ia = check(a), ir = check(r);
    const Tensor& ta = val(ia);
    const Tensor& tr = val(ir);
    ta.require_rank2("add_rowvec");
    tr.require_rank2("add_rowvec");
    if (tr.rows() != 1 || tr.cols() != ta.cols())
        throw DimensionError("add_rowvec: row vector is " + shape_str(tr.shape) +
                             ", expected [1x" + std::to_string(ta.cols()) + "]");
    Tensor out = ta;
    const std::size_t n = ta.rows(), m = ta.cols();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.values[i * m + j] += tr.values[j];
    Var v = push(std::move(out), {ia, ir}, "add_rowvec");
    int io = v.id;
    node(v).backward = [this, ia, ir, io, n, m] {
        const Tensor& g = grad_buf(io);
        if (nodes_[ia].requires_grad)
            for (std::size_t i = 0; i < g.size(); ++i) grad_buf(ia).values[i] += g.values[i];
        if (nodes_[ir].requires_grad)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    grad_buf(ir).values[j] += g.values[i * m + j];
    };
    return v;
}

Var Tape::gelu(Var a) {
    int ia = check(a);
    Tensor out = val(ia);
    for (double& x : out.values) {
        const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        x = 0.5 * x * (1.0 + t);
    }
    Var v = push(std::move(out), {ia}, "gelu");
    int io = v.id;
    node(v).backward = [this, ia, io] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = val(ia).values[i];
            const double u = kGeluC * (x + kGeluA * x * x * x);
            const double t = std::tanh(u);
            const double du = kGeluC * (1.0 + 3.0 * kGeluA * x * x);
            const double d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
            grad_buf(ia).values[i] += g.values[i] * d;
        }
    };
    return v;
}

Var Tape::sqrt_elem(Var a) {
    int ia = check(a);
    Tensor out = val(ia);
    for (double& x : out.values) {
        if (x <= 0.0) throw NumericError("sqrt_elem: non-positive input");
        x = std::sqrt(x);
    }
    Var v = push(std::move(out), {ia}, "sqrt_elem");
    int io = v.id;
    node(v).backward = [this, ia, io] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < g.size(); ++i)
            grad_buf(ia).values[i] += g.values[i] * 0.5 / val(io).values[i];
    };
    return v;
}

Var Tape::safe_log(Var a, double floor) {
    if (floor <= 0.0) throw ParameterError("safe_log: floor must be positive");
    int ia = check(a);
    Tensor out = val(ia);
    for (double& x : out.values) x = std::log(std::max(x, floor));
    Var v = push(std::move(out), {ia}, "safe_log");
    int io = v.id;
    node(v).backward = [this, ia, io, floor] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = val(ia).values[i];
            if (x > floor) grad_buf(ia).values[i] += g.values[i] / x;
        }
    };
    return v;
}

Var Tape::reshape(Var a, Shape s) {
    int ia = check(a);
    if (Tensor::count(s) != val(ia).size())
        throw DimensionError("reshape: element count mismatch");
    Tensor out(std::move(s), val(ia).values);
    Var v = push(std::move(out), {ia}, "reshape");
    int io = v.id;
    node(v).backward = [this, ia, io] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < g.size(); ++i) grad_buf(ia).values[i] += g.values[i];
    };
    return v;
}

Var Tape::concat_scalars(const std::vector<Var>& parts) {
    if (parts.empty()) throw ParameterError("concat_scalars: empty input");
    std::vector<int> ids;
    Tensor out = Tensor::zeros({parts.size()});
    for (std::size_t i = 0; i < parts.size(); ++i) {
        int id = check(parts[i]);
        if (val(id).size() != 1)
            throw DimensionError("concat_scalars: component is not a single value");
        out.values[i] = val(id).values[0];
        ids.push_back(id);
    }
    Var v = push(std::move(out), ids, "concat_scalars");
    int io = v.id;
    node(v).backward = [this, ids, io] {
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < ids.size(); ++i)
            if (nodes_[ids[i]].requires_grad) grad_buf(ids[i]).values[0] += g.values[i];
    };
    return v;
}

Var Tape::pick(Var a, std::size_t index) {
    int ia = check(a);
    if (val(ia).shape.size() != 1) throw DimensionError("pick: expects a 1-D vector");
    if (index >= val(ia).size()) throw ParameterError("pick: index out of range");
    Var v = push(Tensor::scalar(val(ia).values[index]), {ia}, "pick");
    int io = v.id;
    node(v).backward = [this, ia, io, index] {
        if (!nodes_[ia].requires_grad) return;
        grad_buf(ia).values[index] += grad_buf(io).values[0];
    };
    return v;
}

Var Tape::matmul(Var a, Var b) {
    int ia = check(a), ib = check(b);
    const Tensor& ta = val(ia);
    const Tensor& tb = val(ib);
    ta.require_rank2("matmul");
    tb.require_rank2("matmul");
    if (ta.cols() != tb.rows())
        throw DimensionError("matmul: inner dimensions disagree " + shape_str(ta.shape) +
                             " vs " + shape_str(tb.shape));
    const std::size_t n = ta.rows(), k = ta.cols(), m = tb.cols();
    Tensor out = Tensor::zeros({n, m});
    mm_nn(ta.values.data(), tb.values.data(), out.values.data(), n, k, m);
    Var v = push(std::move(out), {ia, ib}, "matmul");
    int io = v.id;
    node(v).backward = [this, ia, ib, io, n, k, m] {
        const Tensor& g = grad_buf(io);
        if (nodes_[ia].requires_grad)  // dA += dC * B^T
            mm_nt(g.values.data(), val(ib).values.data(), grad_buf(ia).values.data(), n, m, k);
        if (nodes_[ib].requires_grad)  // dB += A^T * dC
            mm_tn(val(ia).values.data(), g.values.data(), grad_buf(ib).values.data(), n, k, m);
    };
    return v;
}

Var Tape::transpose(Var a) {
    int ia = check(a);
    const Tensor& ta = val(ia);
    ta.require_rank2("transpose");
    const std::size_t n = ta.rows(), m = ta.cols();
    Tensor out = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.values[j * n + i] = ta.values[i * m + j];
    Var v = push(std::move(out), {ia}, "transpose");
    int io = v.id;
    node(v).backward = [this, ia, io, n, m] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
                grad_buf(ia).values[i * m + j] += g.values[j * n + i];
    };
    return v;
}

Var Tape::sum_all(Var a) {
    int ia = check(a);
    double acc = 0.0;
    for (double x : val(ia).values) acc += x;
    Var v = push(Tensor::scalar(acc), {ia}, "sum_all");
    int io = v.id;
    node(v).backward = [this, ia, io] {
        if (!nodes_[ia].requires_grad) return;
        const double g = grad_buf(io).values[0];
        for (double& x : grad_buf(ia).values) x += g;
    };
    return v;
}

Var Tape::mean_all(Var a) {
    int ia = check(a);
    const std::size_t n = val(ia).size();
    if (n == 0) throw DimensionError("mean_all: empty tensor");
    double acc = 0.0;
    for (double x : val(ia).values) acc += x;
    Var v = push(Tensor::scalar(acc / static_cast<double>(n)), {ia}, "mean_all");
    int io = v.id;
    node(v).backward = [this, ia, io, n] {
        if (!nodes_[ia].requires_grad) return;
        const double g = grad_buf(io).values[0] / static_cast<double>(n);
        for (double& x : grad_buf(ia).values) x += g;
    };
    return v;
}

Var Tape::colmax(Var a) {
    int ia = check(a);
    const Tensor& ta = val(ia);
    ta.require_rank2("colmax");
    const std::size_t n = ta.rows(), m = ta.cols();
    if (n == 0) throw DimensionError("colmax: empty tensor");
    Tensor out = Tensor::zeros({1, m});
    std::vector<std::size_t> arg(m, 0);
    for (std::size_t j = 0; j < m; ++j) {
        double best = ta.values[j];
        for (std::size_t i = 1; i < n; ++i) {
            const double x = ta.values[i * m + j];
            if (x > best) {
                best = x;
                arg[j] = i;
            }
        }
        out.values[j] = best;
    }
    Var v = push(std::move(out), {ia}, "colmax");
    int io = v.id;
    node(v).backward = [this, ia, io, arg, m] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        for (std::size_t j = 0; j < m; ++j)
            grad_buf(ia).values[arg[j] * m + j] += g.values[j];
    };
    return v;
}

Var Tape::colmean(Var a) {
    int ia = check(a);
    const Tensor& ta = val(ia);
    ta.require_rank2("colmean");
    const std::size_t n = ta.rows(), m = ta.cols();
    if (n == 0) throw DimensionError("colmean: empty tensor");
    Tensor out = Tensor::zeros({1, m});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out.values[j] += ta.values[i * m + j];
    for (std::size_t j = 0; j < m; ++j) out.values[j] /= static_cast<double>(n);
    Var v = push(std::move(out), {ia}, "colmean");
    int io = v.id;
    node(v).backward = [this, ia, io, n, m] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < m; ++j)
                grad_buf(ia).values[i * m + j] += g.values[j] / static_cast<double>(n);
    };
    return v;
}

Var Tape::rowgroup_max(Var a, std::size_t group) {
    int ia = check(a);
    const Tensor& ta = val(ia);
    ta.require_rank2("rowgroup_max");
    if (group == 0 || ta.rows() % group != 0)
        throw DimensionError("rowgroup_max: row count not divisible by group size");
    const std::size_t n = ta.rows() / group, m = ta.cols();
    Tensor out = Tensor::zeros({n, m});
    std::vector<std::size_t> arg(n * m, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
            std::size_t best_r = i * group;
            double best = ta.values[best_r * m + j];
            for (std::size_t r = 1; r < group; ++r) {
                const double x = ta.values[(i * group + r) * m + j];
                if (x > best) {
                    best = x;
                    best_r = i * group + r;
                }
            }
            out.values[i * m + j] = best;
            arg[i * m + j] = best_r;
        }
    }
    Var v = push(std::move(out), {ia}, "rowgroup_max");
    int io = v.id;
    node(v).backward = [this, ia, io, arg, m] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        for (std::size_t i = 0; i < g.size(); ++i)
            grad_buf(ia).values[arg[i] * m + i % m] += g.values[i];
    };
    return v;
}

Var Tape::softmax_rows(Var a) {
    int ia = check(a);
    const Tensor& ta = val(ia);
    ta.require_rank2("softmax_rows");
    const std::size_t n = ta.rows(), m = ta.cols();
    Tensor out = ta;
    for (std::size_t i = 0; i < n; ++i) {
        double* row = out.values.data() + i * m;
        double mx = row[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            row[j] = std::exp(row[j] - mx);
            z += row[j];
        }
        for (std::size_t j = 0; j < m; ++j) row[j] /= z;
    }
    Var v = push(std::move(out), {ia}, "softmax_rows");
    int io = v.id;
    node(v).backward = [this, ia, io, n, m] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        const Tensor& y = val(io);
        for (std::size_t i = 0; i < n; ++i) {
            const double* yr = y.values.data() + i * m;
            const double* gr = g.values.data() + i * m;
            double dot = 0.0;
            for (std::size_t j = 0; j < m; ++j) dot += yr[j] * gr[j];
            double* dr = grad_buf(ia).values.data() + i * m;
            for (std::size_t j = 0; j < m; ++j) dr[j] += yr[j] * (gr[j] - dot);
        }
    };
    return v;
}

Var Tape::gumbel_softmax(Var logits, double tau, bool hard, Rng* rng) {
    if (tau <= 0.0) throw ParameterError("gumbel_softmax: temperature must be positive");
    int ia = check(logits);
    const Tensor& ta = val(ia);
    if (ta.shape.size() != 1) throw DimensionError("gumbel_softmax: expects a 1-D logit vector");
    const std::size_t k = ta.size();
    std::vector<double> soft(k);
    {
        std::uniform_real_distribution<double> uni(1e-12, 1.0);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < k; ++i) {
            double noise = rng ? -std::log(-std::log(uni(*rng))) : 0.0;
            soft[i] = (ta.values[i] + noise) / tau;
            mx = std::max(mx, soft[i]);
        }
        double z = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            soft[i] = std::exp(soft[i] - mx);
            z += soft[i];
        }
        for (std::size_t i = 0; i < k; ++i) soft[i] /= z;
    }
    Tensor out({k}, soft);
    if (hard) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < k; ++i)
            if (soft[i] > soft[best]) best = i;
        std::fill(out.values.begin(), out.values.end(), 0.0);
        out.values[best] = 1.0;
    }
    Var v = push(std::move(out), {ia}, "gumbel_softmax");
    int io = v.id;
    // Straight-through: hard output, soft Jacobian.
    node(v).backward = [this, ia, io, soft, tau, k] {
        if (!nodes_[ia].requires_grad) return;
        const Tensor& g = grad_buf(io);
        double dot = 0.0;
        for (std::size_t j = 0; j < k; ++j) dot += soft[j] * g.values[j];
        for (std::size_t j = 0; j < k; ++j)
            grad_buf(ia).values[j] += soft[j] * (g.values[j] - dot) / tau;
    };
    return v;
}

Var Tape::smooth_l1(Var pred, Var target) {
    require_same_shape(pred, target, "smooth_l1");
    int ip = check(pred), it = check(target);
    const std::size_t n = val(ip).size();
    if (n == 0) throw DimensionError("smooth_l1: empty tensors");
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double e = val(ip).values[i] - val(it).values[i];
        const double a = std::abs(e);
        acc += a < 1.0 ? 0.5 * e * e : a - 0.5;
    }
    Var v = push(Tensor::scalar(acc / static_cast<double>(n)), {ip, it}, "smooth_l1");
    int io = v.id;
    node(v).backward = [this, ip, it, io, n] {
        const double g = grad_buf(io).values[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double e = val(ip).values[i] - val(it).values[i];
            const double d = std::abs(e) < 1.0 ? e : (e > 0.0 ? 1.0 : -1.0);
            if (nodes_[ip].requires_grad) grad_buf(ip).values[i] += g * d;
            if (nodes_[it].requires_grad) grad_buf(it).values[i] -= g * d;
        }
    };
    return v;
}

Var Tape::cross_entropy_rows(Var target, Var logits) {
    require_same_shape(target, logits, "cross_entropy_rows");
    int it = check(target), il = check(logits);
    const Tensor& tt = val(it);
    const Tensor& tl = val(il);
    tt.require_rank2("cross_entropy_rows");
    const std::size_t n = tt.rows(), m = tt.cols();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            const double p = tt.values[i * m + j];
            if (p < -1e-9) throw ContractError("cross_entropy_rows: negative target probability");
            s += p;
        }
        if (std::abs(s - 1.0) > 1e-5)
            throw ContractError("cross_entropy_rows: target row " + std::to_string(i) +
                                " sums to " + std::to_string(s) + ", expected 1");
    }
    // Mean over rows of -sum_j t_ij * log softmax(z)_ij. The target is treated
    // as a constant: gradient reaches the logits only.
    double acc = 0.0;
    std::vector<double> probs(n * m);
    for (std::size_t i = 0; i < n; ++i) {
        const double* zr = tl.values.data() + i * m;
        double mx = zr[0];
        for (std::size_t j = 1; j < m; ++j) mx = std::max(mx, zr[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < m; ++j) z += std::exp(zr[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < m; ++j) {
            probs[i * m + j] = std::exp(zr[j] - lse);
            acc += tt.values[i * m + j] * (lse - zr[j]);
        }
    }
    Var v = push(Tensor::scalar(acc / static_cast<double>(n)), {il}, "cross_entropy_rows");
    int io = v.id;
    node(v).backward = [this, it, il, io, probs, n, m] {
        if (!nodes_[il].requires_grad) return;
        const double g = grad_buf(io).values[0] / static_cast<double>(n);
        for (std::size_t i = 0; i < n * m; ++i)
            grad_buf(il).values[i] += g * (probs[i] - val(it).values[i]);
    };
    return v;
}

Var Tape::chamfer(Var x_positions, Var y_positions) {
    int ix = check(x_positions), iy = check(y_positions);
    const Tensor& tx = val(ix);
    const Tensor& ty = val(iy);
    tx.require_rank2("chamfer");
    ty.require_rank2("chamfer");
    if (tx.cols() != ty.cols())
        throw DimensionError("chamfer: coordinate dimensions disagree");
    const std::size_t n = tx.rows(), m = ty.rows(), c = tx.cols();
    if (n == 0 || m == 0) throw ParameterError("chamfer: empty point set");
    std::vector<std::size_t> nn_x(n), nn_y(m);
    double sum_x = 0.0, sum_y = 0.0;
    std::vector<double> min_y(m, std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        std::size_t bj = 0;
        const double* xi = tx.values.data() + i * c;
        for (std::size_t j = 0; j < m; ++j) {
            const double* yj = ty.values.data() + j * c;
            double d = 0.0;
            for (std::size_t q = 0; q < c; ++q) {
                const double e = xi[q] - yj[q];
                d += e * e;
            }
            if (d < best) {
                best = d;
                bj = j;
            }
            if (d < min_y[j]) {
                min_y[j] = d;
                nn_y[j] = i;
            }
        }
        nn_x[i] = bj;
        sum_x += best;
    }
    for (std::size_t j = 0; j < m; ++j) sum_y += min_y[j];
    const double value = sum_x / static_cast<double>(n) + sum_y / static_cast<double>(m);
    Var v = push(Tensor::scalar(value), {ix, iy}, "chamfer");
    int io = v.id;
    node(v).backward = [this, ix, iy, io, nn_x, nn_y, n, m, c] {
        const double g = grad_buf(io).values[0];
        const Tensor& tx2 = val(ix);
        const Tensor& ty2 = val(iy);
        const bool gx = nodes_[ix].requires_grad, gy = nodes_[iy].requires_grad;
        const double wx = 2.0 * g / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t j = nn_x[i];
            for (std::size_t q = 0; q < c; ++q) {
                const double e = tx2.values[i * c + q] - ty2.values[j * c + q];
                if (gx) grad_buf(ix).values[i * c + q] += wx * e;
                if (gy) grad_buf(iy).values[j * c + q] -= wx * e;
            }
        }
        const double wy = 2.0 * g / static_cast<double>(m);
        for (std::size_t j = 0; j < m; ++j) {
            const std::size_t i = nn_y[j];
            for (std::size_t q = 0; q < c; ++q) {
                const double e = ty2.values[j * c + q] - tx2.values[i * c + q];
                if (gy) grad_buf(iy).values[j * c + q] += wy * e;
                if (gx) grad_buf(ix).values[i * c + q] -= wy * e;
            }
        }
    };
    return v;
}

Var Tape::gather_cols_per_row(Var s, const std::vector<int>& idx, std::size_t k) {
    int is = check(s);
    const Tensor& ts = val(is);
    ts.require_rank2("gather_cols_per_row");
    const std::size_t n = ts.rows(), m = ts.cols();
    if (idx.size() != n * k) throw DimensionError("gather_cols_per_row: index table size mismatch");
    Tensor out = Tensor::zeros({n, k});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const int col = idx[i * k + j];
            if (col < 0 || static_cast<std::size_t>(col) >= m)
                throw ParameterError("gather_cols_per_row: index out of range");
            out.values[i * k + j] = ts.values[i * m + col];
        }
    Var v = push(std::move(out), {is}, "gather_cols_per_row");
    int io = v.id;
    node(v).backward = [this, is, io, idx, k, m] {
        if (!nodes_[is].requires_grad) return;
        const Tensor& g = grad_buf(io);
        const std::size_t n2 = g.rows();
        for (std::size_t i = 0; i < n2; ++i)
            for (std::size_t j = 0; j < k; ++j)
                grad_buf(is).values[i * m + idx[i * k + j]] += g.values[i * k + j];
    };
    return v;
}

Var Tape::weighted_gather_positions(Var w, const std::vector<int>& idx, Var p) {
    int iw = check(w), ip = check(p);
    const Tensor& tw = val(iw);
    const Tensor& tp = val(ip);
    tw.require_rank2("weighted_gather_positions");
    tp.require_rank2("weighted_gather_positions");
    const std::size_t n = tw.rows(), k = tw.cols(), m = tp.rows(), c = tp.cols();
    if (idx.size() != n * k)
        throw DimensionError("weighted_gather_positions: index table size mismatch");
    Tensor out = Tensor::zeros({n, c});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < k; ++j) {
            const int r = idx[i * k + j];
            if (r < 0 || static_cast<std::size_t>(r) >= m)
                throw ParameterError("weighted_gather_positions: index out of range");
            const double wij = tw.values[i * k + j];
            for (std::size_t q = 0; q < c; ++q)
                out.values[i * c + q] += wij * tp.values[static_cast<std::size_t>(r) * c + q];
        }
    Var v = push(std::move(out), {iw, ip}, "weighted_gather_positions");
    int io = v.id;
    node(v).backward = [this, iw, ip, io, idx, k, c] {
        const Tensor& g = grad_buf(io);
        const std::size_t n2 = g.rows();
        const bool gw = nodes_[iw].requires_grad, gp = nodes_[ip].requires_grad;
        for (std::size_t i = 0; i < n2; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                const std::size_t r = static_cast<std::size_t>(idx[i * k + j]);
                double acc = 0.0;
                for (std::size_t q = 0; q < c; ++q) {
                    const double go = g.values[i * c + q];
                    acc += go * val(ip).values[r * c + q];
                    if (gp) grad_buf(ip).values[r * c + q] += val(iw).values[i * k + j] * go;
                }
                if (gw) grad_buf(iw).values[i * k + j] += acc;
            }
    };
    return v;
}

void Tape::backward(Var root, double seed) {
    const int ir = check(root);
    if (backward_done_) throw ContractError("Tape::backward: tape already swept");
    backward_done_ = true;
    if (val(ir).size() != 1)
        throw ContractError("Tape::backward: root must hold a single value");
    if (!nodes_[ir].requires_grad) {
        // Nothing reaches a parameter; the sweep would be a no-op.
        return;
    }
    // Mark the subgraph that actually feeds the root; everything else (e.g.
    // detached targets) is skipped.
    std::vector<char> reach(nodes_.size(), 0);
    reach[ir] = 1;
    for (int i = ir; i >= 0; --i) {
        if (!reach[i]) continue;
        for (int in : nodes_[i].inputs) reach[in] = 1;
    }
    grad_buf(ir).values[0] = seed;
    for (int i = ir; i >= 0; --i) {
        if (!reach[i] || !nodes_[i].requires_grad) continue;
        if (nodes_[i].backward) nodes_[i].backward();
    }
    for (auto& [p, id] : param_leaves_) {
        if (!reach[id]) continue;
        const Tensor& g = nodes_[id].grad;
        for (std::size_t i = 0; i < g.size(); ++i) p->grad.values[i] += g.values[i];
    }
}

}  // namespace tacorr
