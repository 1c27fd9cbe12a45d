#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "tacorr/tape.hpp"

namespace tacorr {

// Builds a scalar graph from leaf variables (one per input tensor). Must be
// deterministic: any randomness has to be captured before the check.
using GraphFn = std::function<Var(Tape&, const std::vector<Var>&)>;

struct FdOptions {
    double h = 1e-5;
    // < 0 checks every coordinate; otherwise at most this many random
    // coordinates per tensor (requires rng).
    int max_coords_per_tensor = -1;
    Rng* rng = nullptr;
    // Test hook: offsets one analytic gradient entry so the check must fail.
    double corrupt = 0.0;
    // Coordinates where BOTH |analytic| and |numeric| fall below this are
    // skipped: at f64 with h = 1e-5 the central difference of an O(1) loss
    // carries ~1e-11 of cancellation noise, so such components carry no
    // information. A wrongly-zero analytic gradient still fails because the
    // numeric side stays large.
    double noise_floor = 0.0;
};

// Central finite differences against the tape gradient; returns the max
// relative error with denominator max(|analytic|, |numeric|, 1e-8).
double fd_check_leaves(const GraphFn& build, const std::vector<Tensor>& inputs,
                       const FdOptions& opts = {});

// Same contract for functions that read Parameters directly: `loss` evaluates
// the scalar from current parameter values, `grads` populates param.grad.
double fd_check_params(const std::function<double()>& loss,
                       const std::function<void()>& grads,
                       const std::vector<Parameter*>& params, const FdOptions& opts = {});

// Registry of every differentiable op plus the composed micro pipeline. Each
// entry returns the max relative error for one seed.
struct GradCheckEntry {
    std::string name;
    std::function<double(std::uint64_t seed, double corrupt)> run;
};

const std::vector<GradCheckEntry>& gradcheck_registry();

struct GradCheckRow {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

// Runs every registry entry over `seeds` consecutive seeds starting at
// base_seed; corrupt_name != "" corrupts that entry (negative control).
std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t base_seed, int seeds,
                                              double tolerance = 1e-4,
                                              const std::string& corrupt_name = "");

void print_gradcheck_table(const std::vector<GradCheckRow>& rows, std::ostream& os);

}  // namespace tacorr
