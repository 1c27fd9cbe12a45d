#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "tacorr/error.hpp"

namespace tacorr {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

// Dense row-major tensor of doubles. Rank is arbitrary but everything in this
// project is rank 1 or 2; scalars use shape {1}.
struct Tensor {
    Shape shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        if (count(shape) != values.size())
            throw DimensionError("Tensor: shape/value count mismatch");
    }

    static std::size_t count(const Shape& s) {
        std::size_t n = 1;
        for (std::size_t d : s) n *= d;
        return s.empty() ? 0 : n;
    }

    static Tensor zeros(Shape s) {
        std::size_t n = count(s);
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }
    static Tensor full(Shape s, double v) {
        std::size_t n = count(s);
        return Tensor(std::move(s), std::vector<double>(n, v));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor randn(Shape s, double stddev, Rng& rng) {
        Tensor t = zeros(std::move(s));
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& x : t.values) x = dist(rng);
        return t;
    }
    static Tensor uniform(Shape s, double lo, double hi, Rng& rng) {
        Tensor t = zeros(std::move(s));
        std::uniform_real_distribution<double> dist(lo, hi);
        for (double& x : t.values) x = dist(rng);
        return t;
    }

    std::size_t size() const { return values.size(); }
    bool is_scalar() const { return values.size() == 1; }

    std::size_t rows() const {
        require_rank2("rows");
        return shape[0];
    }
    std::size_t cols() const {
        require_rank2("cols");
        return shape[1];
    }
    double& at(std::size_t i) { return values[i]; }
    double at(std::size_t i) const { return values[i]; }
    double& at(std::size_t r, std::size_t c) { return values[r * shape[1] + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * shape[1] + c]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void require_rank2(const char* who) const {
        if (shape.size() != 2) throw DimensionError(std::string(who) + ": tensor is not rank 2");
    }
};

std::string shape_str(const Shape& s);

inline bool all_finite(const Tensor& t) {
    for (double v : t.values)
        if (!std::isfinite(v)) return false;
    return true;
}

// Named trainable tensor with an accumulated gradient of the same shape.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor init)
        : name(std::move(n)), value(std::move(init)), grad(Tensor::zeros(value.shape)) {}

    void zero_grad() { std::fill(grad.values.begin(), grad.values.end(), 0.0); }
};

}  // namespace tacorr
