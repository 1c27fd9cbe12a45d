#include <iostream>

#include <CLI11.hpp>

#include "tacorr/cli_commands.hpp"
#include "tacorr/error.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tacorr - template-assisted point cloud shape correspondence"};
    app.require_subcommand(1);

    tacorr::cli::SynthArgs synth_args;
    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic paired dataset");
    synth->add_option("--count", synth_args.count, "number of shape pairs")->capture_default_str();
    synth->add_option("--points", synth_args.points, "points per cloud")->capture_default_str();
    synth->add_option("--seed", synth_args.seed, "rng seed")->capture_default_str();
    synth->add_option("--out", synth_args.out, "output dataset directory")->required();

    tacorr::cli::TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "train a model on a dataset");
    train->add_option("--config", train_args.config, "JSON config file")->required();
    train->add_option("--data", train_args.data, "dataset directory")->required();
    train->add_option("--out", train_args.out, "output directory")->required();

    tacorr::cli::MatchArgs match_args;
    CLI::App* match = app.add_subcommand("match", "correspond one source/target pair");
    match->add_option("--checkpoint", match_args.checkpoint, "model checkpoint")->required();
    match->add_option("--source", match_args.source, "source cloud (.ply/.xyz)")->required();
    match->add_option("--target", match_args.target, "target cloud (.ply/.xyz)")->required();
    match->add_option("--out", match_args.out, "output directory")->required();
    match->add_option("--mode", match_args.mode, "direct | transitive")->capture_default_str();

    tacorr::cli::EvalArgs eval_args;
    CLI::App* eval = app.add_subcommand("eval", "evaluate err/acc on a dataset");
    eval->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
    eval->add_option("--data", eval_args.data, "dataset directory with ground truth")->required();
    eval->add_option("--out", eval_args.out, "output directory")->required();

    tacorr::cli::GradcheckArgs gc_args;
    CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    gradcheck->add_option("--seed", gc_args.seed, "base rng seed")->capture_default_str();
    gradcheck->add_option("--seeds", gc_args.seeds, "seeds per op")->capture_default_str();
    gradcheck->add_option("--corrupt", gc_args.corrupt, "force-fail this op (negative control)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        app.exit(e);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) {
            tacorr::cli::run_synth(synth_args, std::cout);
        } else if (train->parsed()) {
            tacorr::cli::run_train(train_args, std::cout);
        } else if (match->parsed()) {
            tacorr::cli::run_match(match_args, std::cout);
        } else if (eval->parsed()) {
            tacorr::cli::run_eval(eval_args, std::cout);
        } else if (gradcheck->parsed()) {
            if (tacorr::cli::run_gradcheck(gc_args, std::cout) != 0) return kExitRuntime;
        }
    } catch (const tacorr::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const tacorr::ParameterError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const tacorr::DimensionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const tacorr::ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}
