#include <doctest.h>

#include <cmath>

#include "tacorr/optim.hpp"
#include "tacorr/tape.hpp"

using namespace tacorr;

TEST_CASE("adamw leaves parameters unchanged on zero grad, zero decay") {
    Parameter p("w", Tensor({2}, {1.5, -0.5}));
    AdamW::Options opts;
    opts.weight_decay = 0.0;
    AdamW opt({&p}, opts);
    for (int i = 0; i < 3; ++i) opt.step();
    CHECK(p.value.values[0] == 1.5);
    CHECK(p.value.values[1] == -0.5);
}

TEST_CASE("adamw drives a 1-D quadratic to zero") {
    // f(w) = w^2, grad = 2w; the optimizer run is its own oracle here.
    Parameter w("w", Tensor::scalar(1.0));
    AdamW::Options opts;
    opts.lr = 0.1;
    opts.weight_decay = 0.0;
    AdamW opt({&w}, opts);
    for (int i = 0; i < 200; ++i) {
        opt.zero_grad();
        w.grad.values[0] = 2.0 * w.value.values[0];
        opt.step();
    }
    CHECK(std::abs(w.value.values[0]) < 1e-2);
}

TEST_CASE("adamw decoupled weight decay matches the closed form") {
    Parameter w("w", Tensor::scalar(2.0));
    AdamW::Options opts;
    opts.lr = 0.1;
    opts.weight_decay = 0.1;
    AdamW opt({&w}, opts);
    double expected = 2.0;
    for (int i = 0; i < 5; ++i) {
        opt.zero_grad();  // zero grad: only the decay term acts
        opt.step();
        expected *= 1.0 - opts.lr * opts.weight_decay;
        CHECK(w.value.values[0] == doctest::Approx(expected).epsilon(1e-12));
    }
}

TEST_CASE("adamw rejects mismatched grad shape") {
    Parameter p("w", Tensor::scalar(1.0));
    p.grad = Tensor::zeros({2});
    AdamW opt({&p}, {});
    CHECK_THROWS_AS(opt.step(), ContractError);
}

TEST_CASE("adamw rejects non-finite gradients") {
    Parameter p("w", Tensor::scalar(1.0));
    p.grad.values[0] = std::nan("");
    AdamW opt({&p}, {});
    CHECK_THROWS_AS(opt.step(), NumericError);
}

TEST_CASE("gradient descent through the tape trains a tiny least squares") {
    Rng rng(17);
    Tensor inputs = Tensor::uniform({8, 2}, -1, 1, rng);
    Tensor target = Tensor::zeros({8, 1});
    for (std::size_t i = 0; i < 8; ++i)
        target.values[i] = 2.0 * inputs.values[i * 2] - 0.7 * inputs.values[i * 2 + 1];
    Parameter w("w", Tensor::uniform({2, 1}, -0.1, 0.1, rng));
    AdamW::Options opts;
    opts.lr = 5e-2;
    opts.weight_decay = 0.0;
    AdamW opt({&w}, opts);
    double last = 1e9;
    for (int step = 0; step < 300; ++step) {
        opt.zero_grad();
        Tape t;
        Var pred = t.matmul(t.constant(inputs), t.param(w));
        Var diff = t.sub(pred, t.constant(target));
        Var loss = t.mean_all(t.mul(diff, diff));
        last = t.value(loss).values[0];
        t.backward(loss);
        opt.step();
    }
    CHECK(last < 1e-6);
    CHECK(w.value.values[0] == doctest::Approx(2.0).epsilon(1e-2));
    CHECK(w.value.values[1] == doctest::Approx(-0.7).epsilon(1e-2));
}
