#include "tacorr/cli_commands.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#include <json.hpp>

#include "tacorr/checkpoint.hpp"
#include "tacorr/config.hpp"
#include "tacorr/gradcheck.hpp"
#include "tacorr/synth.hpp"

namespace tacorr::cli {

namespace {

using nlohmann::json;

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

}  // namespace

std::string loss_curve_csv(const std::vector<LossRow>& curve) {
    std::string csv = "step,total,trans,align,tc,constr\n";
    for (const LossRow& row : curve) {
        csv += std::to_string(row.step);
        for (double v : {row.losses.total, row.losses.trans, row.losses.align, row.losses.tc,
                         row.losses.constr})
            csv += "," + fmt(v);
        csv += "\n";
    }
    return csv;
}

std::vector<double> acc_epsilon_grid() {
    std::vector<double> grid;
    for (int i = 0; i <= 10; ++i) grid.push_back(static_cast<double>(i) / 100.0);
    return grid;
}

void run_synth(const SynthArgs& args, std::ostream& log) {
    Rng rng(args.seed);
    std::vector<ShapePair> pairs = synth_pairs(args.count, args.points, rng);
    save_dataset(pairs, args.out);
    log << "wrote " << args.count << " pairs of " << args.points << " points (seed "
        << args.seed << ") to " << args.out.string() << "\n";
}

void run_train(const TrainArgs& args, std::ostream& log) {
    const TrainConfig config = load_config_file(args.config);
    std::string profile = "desk";
    {
        std::ifstream in(args.config);
        profile = profile_of(json::parse(in));
    }
    std::vector<ShapePair> dataset = load_dataset(args.data);
    for (ShapePair& pair : dataset) pair = normalized(pair);
    std::vector<PointCloud> seeds;
    for (const ShapePair& pair : dataset) {
        seeds.push_back(pair.source);
        seeds.push_back(pair.target);
    }
    std::filesystem::create_directories(args.out);
    write_text(args.out / "resolved_config.json", config_to_json(config, profile).dump(2) + "\n");

    Rng init_rng(config.seed);
    Model model = Model::init(config.model, seeds, init_rng);
    const CheckpointHook hook = [&](std::size_t step, const Model& m) {
        char name[48];
        std::snprintf(name, sizeof name, "model_step%06zu.ckpt", step);
        save_checkpoint(m, args.out / name);
    };
    std::vector<LossRow> curve = train(model, dataset, config, hook);
    save_checkpoint(model, args.out / "model.ckpt");
    write_text(args.out / "loss.csv", loss_curve_csv(curve));
    log << "trained " << config.steps << " steps on " << dataset.size() << " pairs; final loss "
        << (curve.empty() ? 0.0 : curve.back().losses.total) << "\n";
    log << "checkpoint: " << (args.out / "model.ckpt").string() << "\n";
}

void run_match(const MatchArgs& args, std::ostream& log) {
    if (args.mode != "direct" && args.mode != "transitive")
        throw ParameterError("match: mode must be 'direct' or 'transitive'");
    Model model = load_checkpoint(args.checkpoint);
    ShapePair raw;
    raw.source = load_cloud(args.source);
    raw.target = load_cloud(args.target);
    if (raw.source.size() < model.cfg.knn_k || raw.target.size() < model.cfg.knn_k)
        throw DimensionError("match: clouds have " + std::to_string(raw.source.size()) + "/" +
                             std::to_string(raw.target.size()) + " points, checkpoint needs >= " +
                             std::to_string(model.cfg.knn_k) + " (knn_k)");
    ShapePair pair = normalized(raw);
    const Correspondence corr =
        args.mode == "transitive" ? infer_transitive(model, pair) : infer(model, pair);
    std::filesystem::create_directories(args.out);
    std::string indices;
    for (int idx : corr) indices += std::to_string(idx) + "\n";
    write_text(args.out / "correspondence.txt", indices);
    export_correspondence_ply(raw.source, raw.target, corr, args.out);
    log << "matched " << corr.size() << " points (" << args.mode << ") -> "
        << args.out.string() << "\n";
}

void run_eval(const EvalArgs& args, std::ostream& log) {
    Model model = load_checkpoint(args.checkpoint);
    std::vector<ShapePair> dataset = load_dataset(args.data);
    const std::vector<double> grid = acc_epsilon_grid();
    json pairs_report = json::array();
    double err_sum = 0.0;
    std::vector<double> acc_sum(grid.size(), 0.0);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
        if (!dataset[i].ground_truth)
            throw ContractError("eval: pair " + std::to_string(i) + " has no gt.txt");
        ShapePair pair = normalized(dataset[i]);
        const Correspondence pred = infer(model, pair);
        json entry;
        entry["pair"] = i;
        entry["err"] = metric_err(pred, pair);
        json accs = json::array();
        for (std::size_t g = 0; g < grid.size(); ++g) {
            const double a = metric_acc(pred, pair, grid[g]);
            accs.push_back({{"epsilon", grid[g]}, {"acc", a}});
            acc_sum[g] += a;
        }
        entry["acc"] = accs;
        err_sum += entry["err"].get<double>();
        pairs_report.push_back(entry);
    }
    const double n = static_cast<double>(dataset.size());
    json aggregate;
    aggregate["err"] = err_sum / n;
    json accs = json::array();
    std::string acc_csv = "epsilon,acc\n";
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const double a = acc_sum[g] / n;
        accs.push_back({{"epsilon", grid[g]}, {"acc", a}});
        char eps[16];
        std::snprintf(eps, sizeof eps, "%.2f", grid[g]);
        acc_csv += std::string(eps) + "," + fmt(a) + "\n";
    }
    aggregate["acc"] = accs;
    json report;
    report["pairs"] = pairs_report;
    report["aggregate"] = aggregate;
    std::filesystem::create_directories(args.out);
    write_text(args.out / "metrics.json", report.dump(2) + "\n");
    write_text(args.out / "acc_table.csv", acc_csv);
    log << "evaluated " << dataset.size() << " pairs: err " << aggregate["err"].get<double>()
        << ", acc(0.10) " << acc_sum.back() / n << "\n";
}

int run_gradcheck(const GradcheckArgs& args, std::ostream& log) {
    const std::vector<GradCheckRow> rows =
        run_gradcheck_suite(args.seed, args.seeds, 1e-4, args.corrupt);
    print_gradcheck_table(rows, log);
    int failures = 0;
    for (const GradCheckRow& r : rows)
        if (!r.pass) ++failures;
    log << (failures == 0 ? "all checks passed" : std::to_string(failures) + " check(s) FAILED")
        << " (" << args.seeds << " seeds)\n";
    return failures;
}

}  // namespace tacorr::cli
