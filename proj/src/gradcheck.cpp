#include "tacorr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

namespace tacorr {

namespace {

double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    return std::abs(analytic - numeric) / denom;
}

std::vector<std::size_t> coord_subset(std::size_t n, const FdOptions& opts) {
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (opts.max_coords_per_tensor >= 0 &&
        static_cast<std::size_t>(opts.max_coords_per_tensor) < n) {
        if (!opts.rng) throw ParameterError("fd_check: coordinate subsampling needs an rng");
        std::shuffle(coords.begin(), coords.end(), *opts.rng);
        coords.resize(static_cast<std::size_t>(opts.max_coords_per_tensor));
    }
    return coords;
}

}  // namespace

double fd_check_leaves(const GraphFn& build, const std::vector<Tensor>& inputs,
                       const FdOptions& opts) {
    // Analytic pass.
    std::vector<Tensor> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(inputs.size());
        for (const Tensor& t : inputs) vars.push_back(tape.leaf(t, true));
        Var root = build(tape, vars);
        if (tape.value(root).size() != 1)
            throw ContractError("fd_check_leaves: graph output is not scalar");
        tape.backward(root);
        for (Var v : vars) analytic.push_back(tape.grad(v));
    }
    if (opts.corrupt != 0.0 && !analytic.empty() && analytic[0].size() > 0)
        analytic[0].values[0] += opts.corrupt * (1.0 + std::abs(analytic[0].values[0]));

    auto eval = [&](const std::vector<Tensor>& xs) {
        Tape tape;
        std::vector<Var> vars;
        vars.reserve(xs.size());
        for (const Tensor& t : xs) vars.push_back(tape.leaf(t, false));
        return tape.value(build(tape, vars)).values[0];
    };

    double worst = 0.0;
    std::vector<Tensor> probe = inputs;
    for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
        for (std::size_t ci : coord_subset(inputs[ti].size(), opts)) {
            const double x0 = probe[ti].values[ci];
            probe[ti].values[ci] = x0 + opts.h;
            const double fp = eval(probe);
            probe[ti].values[ci] = x0 - opts.h;
            const double fm = eval(probe);
            probe[ti].values[ci] = x0;
            const double numeric = (fp - fm) / (2.0 * opts.h);
            const double analytic_v = analytic[ti].values[ci];
            if (std::max(std::abs(analytic_v), std::abs(numeric)) < opts.noise_floor) continue;
            worst = std::max(worst, rel_err(analytic_v, numeric));
        }
    }
    return worst;
}

double fd_check_params(const std::function<double()>& loss, const std::function<void()>& grads,
                       const std::vector<Parameter*>& params, const FdOptions& opts) {
    for (Parameter* p : params) p->zero_grad();
    grads();
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (Parameter* p : params) analytic.push_back(p->grad);
    if (opts.corrupt != 0.0 && !analytic.empty() && analytic[0].size() > 0)
        analytic[0].values[0] += opts.corrupt * (1.0 + std::abs(analytic[0].values[0]));

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        for (std::size_t ci : coord_subset(p.value.size(), opts)) {
            const double x0 = p.value.values[ci];
            p.value.values[ci] = x0 + opts.h;
            const double fp = loss();
            p.value.values[ci] = x0 - opts.h;
            const double fm = loss();
            p.value.values[ci] = x0;
            const double numeric = (fp - fm) / (2.0 * opts.h);
            const double analytic_v = analytic[pi].values[ci];
            if (std::max(std::abs(analytic_v), std::abs(numeric)) < opts.noise_floor) continue;
            worst = std::max(worst, rel_err(analytic_v, numeric));
        }
    }
    return worst;
}

std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t base_seed, int seeds,
                                              double tolerance,
                                              const std::string& corrupt_name) {
    std::vector<GradCheckRow> rows;
    for (const GradCheckEntry& entry : gradcheck_registry()) {
        GradCheckRow row;
        row.name = entry.name;
        const double corrupt = entry.name == corrupt_name ? 0.5 : 0.0;
        for (int s = 0; s < seeds; ++s)
            row.max_rel_err =
                std::max(row.max_rel_err, entry.run(base_seed + static_cast<std::uint64_t>(s),
                                                    corrupt));
        row.pass = row.max_rel_err < tolerance;
        rows.push_back(std::move(row));
    }
    return rows;
}

void print_gradcheck_table(const std::vector<GradCheckRow>& rows, std::ostream& os) {
    std::size_t width = 12;
    for (const auto& r : rows) width = std::max(width, r.name.size());
    for (const auto& r : rows)
        os << std::left << std::setw(static_cast<int>(width + 2)) << r.name << std::scientific
           << std::setprecision(3) << r.max_rel_err << "  " << (r.pass ? "pass" : "FAIL")
           << "\n";
}

}  // namespace tacorr
