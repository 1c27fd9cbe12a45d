#pragma once

#include <filesystem>
#include <iosfwd>

#include "tacorr/pipeline.hpp"

namespace tacorr::cli {

struct SynthArgs {
    std::size_t count = 4;
    std::size_t points = 128;
    std::uint64_t seed = 0;
    std::filesystem::path out;
};
void run_synth(const SynthArgs& args, std::ostream& log);

struct TrainArgs {
    std::filesystem::path config;
    std::filesystem::path data;
    std::filesystem::path out;
};
void run_train(const TrainArgs& args, std::ostream& log);

struct MatchArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path source;
    std::filesystem::path target;
    std::filesystem::path out;
    std::string mode = "direct";  // direct | transitive
};
void run_match(const MatchArgs& args, std::ostream& log);

struct EvalArgs {
    std::filesystem::path checkpoint;
    std::filesystem::path data;
    std::filesystem::path out;
};
void run_eval(const EvalArgs& args, std::ostream& log);

struct GradcheckArgs {
    std::uint64_t seed = 0;
    int seeds = 20;
    std::string corrupt;  // test hook: force-fail one registry row
};
// Returns the number of failing rows.
int run_gradcheck(const GradcheckArgs& args, std::ostream& log);

// Shared helpers, exposed for tests.
std::string loss_curve_csv(const std::vector<LossRow>& curve);
std::vector<double> acc_epsilon_grid();  // 0.00 .. 0.10 step 0.01

}  // namespace tacorr::cli
