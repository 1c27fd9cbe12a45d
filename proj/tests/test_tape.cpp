#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tacorr/gradcheck.hpp"
#include "tacorr/tape.hpp"

using namespace tacorr;

namespace {

Tensor t2(std::initializer_list<double> v, std::size_t rows, std::size_t cols) {
    return Tensor({rows, cols}, std::vector<double>(v));
}

}  // namespace

TEST_CASE("matmul identity and hand-computed product") {
    Tape tape;
    Var eye = tape.constant(t2({1, 0, 0, 1}, 2, 2));
    Var a = tape.constant(t2({1, 2, 3, 4}, 2, 2));
    const Tensor& c = tape.value(tape.matmul(eye, a));
    CHECK(c.values == std::vector<double>{1, 2, 3, 4});

    Var b = tape.constant(t2({5, 6}, 2, 1));
    const Tensor& d = tape.value(tape.matmul(a, b));
    CHECK(d.at(0, 0) == doctest::Approx(17));
    CHECK(d.at(1, 0) == doctest::Approx(39));
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
    Tape tape;
    Var a = tape.constant(Tensor::zeros({2, 3}));
    Var b = tape.constant(Tensor::zeros({2, 3}));
    CHECK_THROWS_AS(tape.matmul(a, b), DimensionError);
}

TEST_CASE("matmul gradient of sum matches finite differences") {
    Rng rng(11);
    Tensor a = Tensor::uniform({3, 4}, -1, 1, rng);
    Tensor b = Tensor::uniform({4, 2}, -1, 1, rng);
    const double err = fd_check_leaves(
        [](Tape& t, const std::vector<Var>& v) { return t.sum_all(t.matmul(v[0], v[1])); },
        {a, b});
    CHECK(err < 1e-6);
}

TEST_CASE("softmax_rows basic values") {
    Tape tape;
    Var a = tape.constant(t2({0, 0}, 1, 2));
    const Tensor& y = tape.value(tape.softmax_rows(a));
    CHECK(y.at(0, 0) == doctest::Approx(0.5));
    CHECK(y.at(0, 1) == doctest::Approx(0.5));

    Var b = tape.constant(t2({std::log(2.0), 0.0}, 1, 2));
    const Tensor& z = tape.value(tape.softmax_rows(b));
    CHECK(z.at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-9));
    CHECK(z.at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("softmax_rows is row-stochastic and shift invariant") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = Tensor::uniform({4, 7}, -3, 3, rng);
        Tensor shifted = a;
        std::uniform_real_distribution<double> cdist(-5.0, 5.0);
        for (std::size_t i = 0; i < 4; ++i) {
            const double c = cdist(rng);
            for (std::size_t j = 0; j < 7; ++j) shifted.values[i * 7 + j] += c;
        }
        Tape tape;
        const Tensor& y = tape.value(tape.softmax_rows(tape.constant(a)));
        const Tensor& ys = tape.value(tape.softmax_rows(tape.constant(shifted)));
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 7; ++j) {
                CHECK(y.at(i, j) >= 0.0);
                sum += y.at(i, j);
                CHECK(std::abs(y.at(i, j) - ys.at(i, j)) < 1e-9);
            }
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("non-finite leaf input raises NumericError") {
    Tape tape;
    Tensor bad = Tensor::zeros({1, 2});
    bad.values[0] = std::nan("");
    CHECK_THROWS_AS(tape.constant(bad), NumericError);
}

TEST_CASE("smooth_l1 closed-form values") {
    Tape tape;
    Var zero = tape.constant(Tensor::scalar(0.0));
    Var p = tape.constant(Tensor::scalar(0.5));
    Var q = tape.constant(Tensor::scalar(2.0));
    CHECK(tape.value(tape.smooth_l1(p, zero)).values[0] == doctest::Approx(0.125));
    CHECK(tape.value(tape.smooth_l1(q, zero)).values[0] == doctest::Approx(1.5));
    CHECK(tape.value(tape.smooth_l1(p, p)).values[0] == doctest::Approx(0.0));
    CHECK_THROWS_AS(tape.smooth_l1(p, tape.constant(Tensor::zeros({2}))), DimensionError);
}

TEST_CASE("cross_entropy_rows closed form and contract") {
    Tape tape;
    Var target = tape.constant(t2({0.5, 0.5}, 1, 2));
    Var logits = tape.constant(t2({1.3, 1.3}, 1, 2));
    CHECK(tape.value(tape.cross_entropy_rows(target, logits)).values[0] ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));

    // One-hot target matching a sharp prediction drives the loss to zero.
    Var onehot = tape.constant(t2({0, 1}, 1, 2));
    Var sharp = tape.constant(t2({-30.0, 30.0}, 1, 2));
    CHECK(tape.value(tape.cross_entropy_rows(onehot, sharp)).values[0] ==
          doctest::Approx(0.0).epsilon(1e-9));

    Var bad_target = tape.constant(t2({0.5, 0.9}, 1, 2));
    CHECK_THROWS_AS(tape.cross_entropy_rows(bad_target, logits), ContractError);
}

TEST_CASE("cross_entropy_rows gradient reaches logits only") {
    Rng rng(3);
    Tensor logits = Tensor::uniform({3, 4}, -2, 2, rng);
    Tensor target = Tensor::uniform({3, 4}, -2, 2, rng);
    for (std::size_t i = 0; i < 3; ++i) {
        double z = 0;
        for (std::size_t j = 0; j < 4; ++j) {
            double& x = target.values[i * 4 + j];
            x = std::exp(x);
            z += x;
        }
        for (std::size_t j = 0; j < 4; ++j) target.values[i * 4 + j] /= z;
    }
    const double err = fd_check_leaves(
        [&](Tape& t, const std::vector<Var>& v) {
            return t.cross_entropy_rows(t.constant(target), v[0]);
        },
        {logits});
    CHECK(err < 1e-5);

    Tape tape;
    Var tgt = tape.leaf(target, true);
    Var lg = tape.leaf(logits, true);
    tape.backward(tape.cross_entropy_rows(tgt, lg));
    for (double g : tape.grad(tgt).values) CHECK(g == 0.0);
}

TEST_CASE("gumbel_softmax modes") {
    Tensor logits({3}, {1.0, 0.0, 0.0});

    SUBCASE("temperature must be positive") {
        Tape tape;
        Var l = tape.constant(logits);
        CHECK_THROWS_AS(tape.gumbel_softmax(l, 0.0, false, nullptr), ParameterError);
    }
    SUBCASE("hard mode is exactly one-hot") {
        Rng rng(9);
        for (int trial = 0; trial < 25; ++trial) {
            Tape t;
            Tensor l = Tensor::uniform({5}, -2, 2, rng);
            const Tensor& y = t.value(t.gumbel_softmax(t.constant(l), 1.0, true, &rng));
            double sum = 0;
            int nonzero = 0;
            for (double v : y.values) {
                sum += v;
                if (v != 0.0) {
                    ++nonzero;
                    CHECK(v == 1.0);
                }
            }
            CHECK(sum == 1.0);
            CHECK(nonzero == 1);
        }
    }
    SUBCASE("zero noise, tau=1 equals softmax") {
        Tape t;
        Var l = t.constant(logits);
        const Tensor& soft = t.value(t.gumbel_softmax(l, 1.0, false, nullptr));
        const Tensor& ref = t.value(t.softmax_rows(t.reshape(l, {1, 3})));
        for (std::size_t i = 0; i < 3; ++i)
            CHECK(soft.values[i] == doctest::Approx(ref.values[i]).epsilon(1e-12));
    }
    SUBCASE("zero noise, tiny temperature concentrates on the argmax") {
        Tape t;
        const Tensor& y = t.value(t.gumbel_softmax(t.constant(logits), 0.01, false, nullptr));
        CHECK(y.values[0] > 0.999);
    }
    SUBCASE("soft output sums to 1") {
        Rng rng(4);
        for (int trial = 0; trial < 25; ++trial) {
            Tape t;
            Tensor l = Tensor::uniform({4}, -3, 3, rng);
            const Tensor& y = t.value(t.gumbel_softmax(t.constant(l), 0.5, false, &rng));
            double sum = 0;
            for (double v : y.values) sum += v;
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("chamfer hand case, symmetry, translation invariance") {
    Tape tape;
    Tensor x = t2({0, 0, 0, 1, 0, 0}, 2, 3);
    Tensor y = t2({0, 0, 0, 0, 2, 0}, 2, 3);
    CHECK(tape.value(tape.chamfer(tape.constant(x), tape.constant(y))).values[0] ==
          doctest::Approx(2.5));
    CHECK(tape.value(tape.chamfer(tape.constant(y), tape.constant(x))).values[0] ==
          doctest::Approx(2.5));
    CHECK(tape.value(tape.chamfer(tape.constant(x), tape.constant(x))).values[0] ==
          doctest::Approx(0.0));

    Rng rng(2);
    Tensor a = Tensor::uniform({6, 3}, -1, 1, rng);
    Tensor b = Tensor::uniform({5, 3}, -1, 1, rng);
    Tensor at = a, bt = b;
    const double shift[3] = {0.7, -1.3, 0.25};
    for (std::size_t i = 0; i < at.rows(); ++i)
        for (std::size_t c = 0; c < 3; ++c) at.values[i * 3 + c] += shift[c];
    for (std::size_t i = 0; i < bt.rows(); ++i)
        for (std::size_t c = 0; c < 3; ++c) bt.values[i * 3 + c] += shift[c];
    Tape tape2;
    const double base = tape2.value(tape2.chamfer(tape2.constant(a), tape2.constant(b))).values[0];
    const double moved =
        tape2.value(tape2.chamfer(tape2.constant(at), tape2.constant(bt))).values[0];
    CHECK(std::abs(base - moved) < 1e-9);
}

TEST_CASE("detach blocks gradient flow") {
    Tape tape;
    Var x = tape.leaf(Tensor::scalar(2.0), true);
    Var y = tape.mul(x, x);
    Var z = tape.add(tape.detach(y), tape.mul(x, x));
    tape.backward(z);
    CHECK(tape.grad(x).values[0] == doctest::Approx(4.0));  // only the live branch
}

TEST_CASE("backward accumulates into bound parameters and is single-shot") {
    Parameter p("w", Tensor::scalar(3.0));
    Tape tape;
    Var w = tape.param(p);
    Var w2 = tape.param(p);  // cache returns the same leaf
    CHECK(w.id == w2.id);
    tape.backward(tape.mul(w, w));
    CHECK(p.grad.values[0] == doctest::Approx(6.0));
    CHECK_THROWS_AS(tape.backward(w), ContractError);
}

TEST_CASE("backward seed scales the whole gradient") {
    Parameter p("w", Tensor::scalar(3.0));
    Tape tape;
    Var w = tape.param(p);
    tape.backward(tape.mul(w, w), 0.5);
    CHECK(p.grad.values[0] == doctest::Approx(3.0));
}

TEST_CASE("forward determinism: identical inputs and seed give identical bits") {
    Rng rng_a(42), rng_b(42);
    auto run = [](Rng& rng) {
        Tensor x = Tensor::uniform({4, 4}, -1, 1, rng);
        Tape t;
        Var v = t.softmax_rows(t.matmul(t.constant(x), t.constant(x)));
        Var g = t.gumbel_softmax(t.constant(Tensor({3}, {0.1, 0.2, 0.3})), 1.0, false, &rng);
        return std::make_pair(t.value(v).values, t.value(g).values);
    };
    auto [a1, g1] = run(rng_a);
    auto [a2, g2] = run(rng_b);
    CHECK(a1 == a2);
    CHECK(g1 == g2);
}

TEST_CASE("non-finite op output raises NumericError") {
    Tape tape;
    Var a = tape.constant(Tensor::scalar(1e308));
    CHECK_THROWS_AS(tape.mul(tape.scale(a, 10.0), a), NumericError);
}

TEST_CASE("finite_diff harness sanity") {
    SUBCASE("sum has gradient of ones") {
        Rng rng(1);
        Tensor x = Tensor::uniform({5}, -1, 1, rng);
        const double err = fd_check_leaves(
            [](Tape& t, const std::vector<Var>& v) { return t.sum_all(v[0]); }, {x});
        CHECK(err < 1e-10);
    }
    SUBCASE("smooth_l1 against zero at 0.3") {
        Tensor x = Tensor::scalar(0.3);
        const double err = fd_check_leaves(
            [](Tape& t, const std::vector<Var>& v) {
                return t.smooth_l1(v[0], t.constant(Tensor::scalar(0.0)));
            },
            {x});
        CHECK(err < 1e-6);
    }
    SUBCASE("matmul + softmax + cross entropy composition") {
        Rng rng(8);
        Tensor a = Tensor::uniform({3, 4}, -1, 1, rng);
        Tensor b = Tensor::uniform({4, 3}, -1, 1, rng);
        Tensor target = Tensor::full({3, 3}, 1.0 / 3.0);
        const double err = fd_check_leaves(
            [&](Tape& t, const std::vector<Var>& v) {
                return t.cross_entropy_rows(t.constant(target), t.matmul(v[0], v[1]));
            },
            {a, b});
        CHECK(err < 1e-5);
    }
    SUBCASE("non-scalar output is rejected") {
        CHECK_THROWS_AS(
            fd_check_leaves([](Tape& t, const std::vector<Var>& v) { return v[0]; },
                            {Tensor::zeros({2})}),
            ContractError);
    }
}

TEST_CASE("gradcheck registry lists every differentiable op exactly once") {
    const std::vector<std::string> expected = {
        "add",          "sub",        "mul",          "divide",       "scale",
        "scale_by",     "add_rowvec", "gelu",         "sqrt_elem",    "reshape",
        "concat_scalars", "pick",     "matmul",       "transpose",    "sum_all", "safe_log",
        "mean_all",     "colmax",     "colmean",      "rowgroup_max", "softmax_rows",
        "gumbel_softmax", "smooth_l1", "cross_entropy_rows", "chamfer",
        "gather_cols_per_row", "weighted_gather_positions"};
    std::vector<std::string> names;
    for (const auto& e : gradcheck_registry()) names.push_back(e.name);
    for (const std::string& op : expected)
        CHECK(std::count(names.begin(), names.end(), op) == 1);
    // No duplicates anywhere (composite rows included).
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("corruption hook makes exactly the corrupted row fail") {
    const auto rows = run_gradcheck_suite(0, 1, 1e-4, "gelu");
    for (const auto& r : rows) {
        if (r.name == "gelu")
            CHECK_FALSE(r.pass);
        else
            CHECK(r.pass);
    }
}

TEST_CASE("topk_desc orders by value then index") {
    const double affinity[5] = {0.5, 2.0, 0.5, -1.0, 2.0};
    const auto top = topk_desc(affinity, 5, 4);
    CHECK(top == std::vector<int>{1, 4, 0, 2});
    const auto excl = topk_desc(affinity, 5, 3, /*exclude=*/1);
    CHECK(excl == std::vector<int>{4, 0, 2});
    CHECK_THROWS_AS(topk_desc(affinity, 5, 6), ParameterError);
}
