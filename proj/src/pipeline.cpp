#include "tacorr/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tacorr {

ShapePair normalized(const ShapePair& pair) {
    ShapePair out;
    out.source = normalize(pair.source);
    out.target = normalize(pair.target);
    out.ground_truth = pair.ground_truth;
    return out;
}

Model Model::init(const ModelConfig& cfg, const std::vector<PointCloud>& seed_clouds, Rng& rng) {
    Model m;
    m.cfg = cfg;
    m.encoder = EncoderParams::init(cfg.feature_dim, cfg.layers, cfg.knn_k, rng);
    m.encoder.use_absolute_coords = cfg.encoder_absolute_coords;
    m.aligner = AlignerParams::init(cfg.feature_dim, rng);
    m.bank = init_bank(cfg.templates, cfg.template_points, cfg.feature_dim, seed_clouds, rng,
                       cfg.template_embedding_std);
    m.fusion = FusionParams::init(cfg.feature_dim, cfg.template_points, rng);
    return m;
}

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    encoder.collect(out);
    aligner.collect(out);
    bank.collect(out);
    fusion.collect(out);
    return out;
}

std::vector<Parameter*> Model::encoder_parameters() {
    std::vector<Parameter*> out;
    encoder.collect(out);
    return out;
}

std::vector<Parameter*> Model::template_parameters() {
    std::vector<Parameter*> out;
    bank.collect(out);
    return out;
}

Var construction_loss(Tape& tape, const PointCloud& x, const PointCloud& y, Var fused_x,
                      Var fused_y, std::size_t k) {
    Var pos_x = tape.constant(x.to_tensor());
    Var pos_y = tape.constant(y.to_tensor());
    // Cross: rebuild each cloud from the other's positions.
    Var cross_xy = tape.chamfer(
        pos_y, latent_construct(tape, fused_x, fused_y, pos_y, k).positions);
    Var cross_yx = tape.chamfer(
        pos_x, latent_construct(tape, fused_y, fused_x, pos_x, k).positions);
    // Self: rebuild each cloud from itself, own point excluded.
    Var self_x = tape.chamfer(
        pos_x, latent_construct(tape, fused_x, fused_x, pos_x, k, /*exclude_self=*/true).positions);
    Var self_y = tape.chamfer(
        pos_y, latent_construct(tape, fused_y, fused_y, pos_y, k, /*exclude_self=*/true).positions);
    return tape.add(tape.add(cross_xy, cross_yx), tape.add(self_x, self_y));
}

namespace {

// Shared encode -> select -> fuse prefix of training and inference.
struct AssistState {
    Var feats_x, feats_y;    // encoder output
    Var fused_x, fused_y;    // after correlation fusion (or aliases)
    Var selected_embeddings; // straight-through weighted in training
    bool has_template = false;
    std::size_t template_index = static_cast<std::size_t>(-1);
};

AssistState run_assist(Tape& tape, Model& model, const ShapePair& pair, SelectorRouting routing,
                       Rng* rng) {
    AssistState st;
    st.feats_x = encode(tape, pair.source, model.encoder);
    st.feats_y = encode(tape, pair.target, model.encoder);
    if (!model.cfg.use_template_generation) {
        st.fused_x = st.feats_x;
        st.fused_y = st.feats_y;
        return st;
    }
    st.has_template = true;
    Var st_weight{};
    bool weighted = false;
    if (model.cfg.use_selector && model.bank.count > 1) {
        if (routing == SelectorRouting::StraightThrough) {
            if (!rng) throw ContractError("run_assist: straight-through selection needs an rng");
            SelectorChoice choice =
                select_template_train(tape, model.bank, pair.source, pair.target, st.feats_x,
                                      st.feats_y, model.cfg.gumbel_temperature, *rng);
            st.template_index = choice.index;
            st_weight = choice.weight;
            weighted = true;
        } else {
            st.template_index = select_template_eval(model.bank, pair.source, pair.target,
                                                     tape.value(st.feats_x),
                                                     tape.value(st.feats_y));
        }
    } else {
        st.template_index = 0;
    }
    ShapeTemplate& tpl = model.bank.templates.at(st.template_index);
    Var raw_emb = tape.param(tpl.embeddings);
    st.selected_embeddings = weighted ? tape.scale_by(raw_emb, st_weight) : raw_emb;
    if (model.cfg.use_fusion) {
        Var fusion_emb = st.selected_embeddings;
        if (model.cfg.fusion_detaches_embeddings) {
            Var detached = tape.detach(raw_emb);
            fusion_emb = weighted ? tape.scale_by(detached, st_weight) : detached;
        }
        st.fused_x = correlation_fusion(tape, st.feats_x, fusion_emb, model.fusion);
        st.fused_y = correlation_fusion(tape, st.feats_y, fusion_emb, model.fusion);
    } else {
        st.fused_x = st.feats_x;
        st.fused_y = st.feats_y;
    }
    return st;
}

}  // namespace

TotalLoss total_loss(Tape& tape, Model& model, const ShapePair& pair, const LossWeights& weights,
                     SelectorRouting routing, Rng* rng) {
    TotalLossOptions options;
    options.routing = routing;
    options.rng = rng;
    return total_loss(tape, model, pair, weights, options);
}

TotalLoss total_loss(Tape& tape, Model& model, const ShapePair& pair, const LossWeights& weights,
                     const TotalLossOptions& options) {
    if (weights.trans < 0 || weights.align < 0 || weights.tc < 0 || weights.constr < 0)
        throw ParameterError("total_loss: loss weights must be nonnegative");
    AssistState st = run_assist(tape, model, pair, options.routing, options.rng);
    TotalLoss out;
    out.breakdown.template_index = st.template_index;
    std::vector<Var> terms;

    if (st.has_template && model.cfg.use_trans_loss && weights.trans > 0) {
        Var s_xy = direct_similarity(tape, st.fused_x, st.fused_y);
        Var s_xty = transitive_similarity(tape, st.fused_x, st.selected_embeddings, st.fused_y);
        double rev = model.cfg.trans_reverse_weight;
        if (model.cfg.trans_reverse_ramp_start >= 0.0 &&
            model.cfg.trans_reverse_ramp_start < 1.0) {
            const double t = (options.progress - model.cfg.trans_reverse_ramp_start) /
                             (1.0 - model.cfg.trans_reverse_ramp_start);
            rev *= std::clamp(t, 0.0, 1.0);
        }
        Var l_trans;
        if (options.frozen_transitive_target) {
            if (!options.frozen_direct_target)
                throw ContractError("total_loss: both frozen targets must be supplied");
            out.transitive_target = *options.frozen_transitive_target;
            out.direct_target = *options.frozen_direct_target;
            Var ce_direct =
                tape.cross_entropy_rows(tape.constant(out.transitive_target), s_xy);
            const double rows = static_cast<double>(tape.value(s_xty).rows());
            Var ce_transitive = tape.scale(
                tape.sum_all(tape.mul(tape.constant(out.direct_target), tape.safe_log(s_xty))),
                -rev / rows);
            l_trans = tape.add(ce_direct, ce_transitive);
        } else {
            out.transitive_target = tape.value(s_xty);
            {
                Tape probe;  // value-only softmax for the echoed target
                out.direct_target =
                    probe.value(probe.softmax_rows(probe.constant(tape.value(s_xy))));
            }
            l_trans = transitive_loss(tape, s_xty, s_xy, rev);
        }
        out.breakdown.trans = tape.value(l_trans).values[0];
        terms.push_back(tape.scale(l_trans, weights.trans));
    }
    if (st.has_template && weights.align > 0) {
        // Supervised pass on detached encoder features: trains the aligner
        // without touching the encoder.
        Var l_align = align_loss(tape, tape.constant(pair.source.to_tensor()),
                                 tape.detach(st.feats_x), model.aligner);
        l_align = tape.add(l_align, align_loss(tape, tape.constant(pair.target.to_tensor()),
                                               tape.detach(st.feats_y), model.aligner));
        if (model.cfg.align_templates) {
            // Template pass: the aligner gives the selected template's
            // embeddings a geometric learning signal.
            ShapeTemplate& tpl = model.bank.templates.at(st.template_index);
            l_align = tape.add(l_align, align_loss(tape, tape.param(tpl.positions),
                                                   tape.param(tpl.embeddings), model.aligner));
        }
        out.breakdown.align = tape.value(l_align).values[0];
        terms.push_back(tape.scale(l_align, weights.align));
    }
    if (st.has_template && model.cfg.use_tc_loss && weights.tc > 0) {
        ShapeTemplate& tpl = model.bank.templates.at(st.template_index);
        const std::size_t k = std::min(model.cfg.knn_k, model.bank.template_points);
        Var l_tc = template_construction_loss(tape, tape.param(tpl.positions),
                                              tape.param(tpl.embeddings), tape.detach(st.feats_x),
                                              tape.detach(st.feats_y), k);
        out.breakdown.tc = tape.value(l_tc).values[0];
        terms.push_back(tape.scale(l_tc, weights.tc));
    }
    if (weights.constr > 0) {
        const std::size_t k = std::min({model.cfg.knn_k, pair.source.size() - 1,
                                        pair.target.size() - 1});
        Var l_constr =
            construction_loss(tape, pair.source, pair.target, st.fused_x, st.fused_y, k);
        out.breakdown.constr = tape.value(l_constr).values[0];
        terms.push_back(tape.scale(l_constr, weights.constr));
    }

    if (terms.empty()) {
        out.loss = tape.scalar(0.0);
    } else {
        out.loss = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) out.loss = tape.add(out.loss, terms[i]);
    }
    out.breakdown.total = tape.value(out.loss).values[0];
    return out;
}

std::vector<LossRow> train(Model& model, const std::vector<ShapePair>& dataset,
                           const TrainConfig& config, const CheckpointHook& hook) {
    if (dataset.empty()) throw ParameterError("train: empty dataset");
    if (config.batch_size == 0) throw ParameterError("train: batch size must be positive");
    AdamW::Options opts;
    opts.lr = config.lr;
    opts.weight_decay = config.weight_decay;
    opts.beta1 = config.beta1;
    opts.beta2 = config.beta2;
    std::vector<Parameter*> params = model.parameters();
    std::vector<Parameter*> emb_params;
    std::vector<Parameter*> main_params;
    for (Parameter* p : params) {
        const bool is_embedding =
            p->name.rfind("bank.", 0) == 0 && p->name.find(".embeddings") != std::string::npos;
        (is_embedding && config.template_embedding_lr_mult != 1.0 ? emb_params : main_params)
            .push_back(p);
    }
    AdamW optimizer(main_params, opts);
    AdamW::Options emb_opts = opts;
    emb_opts.lr = opts.lr * config.template_embedding_lr_mult;
    AdamW emb_optimizer(emb_params, emb_opts);
    Rng rng(config.seed + 1);
    std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
    std::vector<LossRow> curve;
    curve.reserve(config.steps);
    const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
    for (std::size_t step = 1; step <= config.steps; ++step) {
        if (config.cosine_lr) {
            double lr = config.lr;
            if (config.warmup_steps > 0 && step <= config.warmup_steps) {
                lr = config.lr * static_cast<double>(step) /
                     static_cast<double>(config.warmup_steps);
            } else if (config.steps > config.warmup_steps) {
                const double progress =
                    static_cast<double>(step - config.warmup_steps) /
                    static_cast<double>(config.steps - config.warmup_steps);
                const double floor = config.lr * config.lr_floor_fraction;
                lr = floor + 0.5 * (config.lr - floor) * (1.0 + std::cos(M_PI * progress));
            }
            optimizer.set_lr(lr);
        }
        const bool warm = static_cast<double>(step) >
                          config.template_embedding_warm_fraction *
                              static_cast<double>(config.steps);
        emb_optimizer.set_lr(warm ? config.lr * config.template_embedding_lr_mult : 0.0);
        optimizer.zero_grad();
        emb_optimizer.zero_grad();
        LossBreakdown avg;
        try {
            for (std::size_t b = 0; b < config.batch_size; ++b) {
                const ShapePair& pair = dataset[pick(rng)];
                Tape tape;
                TotalLossOptions options;
                options.routing = SelectorRouting::StraightThrough;
                options.rng = &rng;
                options.progress =
                    static_cast<double>(step) / static_cast<double>(config.steps);
                TotalLoss tl = total_loss(tape, model, pair, config.weights, options);
                tape.backward(tl.loss, inv_batch);
                avg.total += tl.breakdown.total * inv_batch;
                avg.trans += tl.breakdown.trans * inv_batch;
                avg.align += tl.breakdown.align * inv_batch;
                avg.tc += tl.breakdown.tc * inv_batch;
                avg.constr += tl.breakdown.constr * inv_batch;
            }
            if (config.max_grad_norm > 0.0) {
                // Clip per optimizer group so large template-loss gradients
                // cannot squash the encoder updates (or vice versa).
                for (const std::vector<Parameter*>* group : {&main_params, &emb_params}) {
                    double norm_sq = 0.0;
                    for (Parameter* p : *group)
                        for (double g : p->grad.values) norm_sq += g * g;
                    const double norm = std::sqrt(norm_sq);
                    if (norm > config.max_grad_norm) {
                        const double scale = config.max_grad_norm / norm;
                        for (Parameter* p : *group)
                            for (double& g : p->grad.values) g *= scale;
                    }
                }
            }
            optimizer.step();
            emb_optimizer.step();
        } catch (const NumericError& e) {
            throw NumericError("training diverged at step " + std::to_string(step) + ": " +
                               e.what());
        }
        curve.push_back({step, avg});
        if (hook && config.checkpoint_every > 0 && step % config.checkpoint_every == 0)
            hook(step, model);
    }
    return curve;
}

Correspondence correspondence_from_similarity(const Tensor& similarity) {
    similarity.require_rank2("correspondence_from_similarity");
    const std::size_t n = similarity.rows(), m = similarity.cols();
    Correspondence out(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = similarity.values.data() + i * m;
        std::size_t best = 0;
        for (std::size_t j = 1; j < m; ++j)
            if (row[j] > row[best]) best = j;
        out[i] = static_cast<int>(best);
    }
    return out;
}

namespace {

Correspondence infer_impl(Model& model, const ShapePair& pair, bool transitive) {
    Tape tape;
    AssistState st = run_assist(tape, model, pair, SelectorRouting::Deterministic, nullptr);
    Var sim = transitive && st.has_template
                  ? transitive_similarity(tape, st.fused_x, st.selected_embeddings, st.fused_y)
                  : direct_similarity(tape, st.fused_x, st.fused_y);
    return correspondence_from_similarity(tape.value(sim));
}

}  // namespace

Correspondence infer(Model& model, const ShapePair& pair) {
    return infer_impl(model, pair, false);
}

Correspondence infer_transitive(Model& model, const ShapePair& pair) {
    if (!model.cfg.use_template_generation)
        throw ContractError("infer_transitive: model has no template path");
    return infer_impl(model, pair, true);
}

double metric_err(const Correspondence& pred, const ShapePair& pair) {
    if (!pair.ground_truth)
        throw ContractError("metric_err: pair has no ground truth");
    const Correspondence& gt = *pair.ground_truth;
    if (pred.size() != gt.size())
        throw DimensionError("metric_err: prediction length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Vec3& p = pair.target.positions.at(static_cast<std::size_t>(pred[i]));
        const Vec3& g = pair.target.positions.at(static_cast<std::size_t>(gt[i]));
        const double dx = p[0] - g[0], dy = p[1] - g[1], dz = p[2] - g[2];
        acc += std::sqrt(dx * dx + dy * dy + dz * dz);
    }
    return acc / static_cast<double>(pred.size());
}

double metric_acc(const Correspondence& pred, const ShapePair& pair, double eps) {
    if (!pair.ground_truth)
        throw ContractError("metric_acc: pair has no ground truth");
    if (eps < 0.0 || eps > 1.0)
        throw ParameterError("metric_acc: tolerance must lie in [0, 1]");
    const Correspondence& gt = *pair.ground_truth;
    if (pred.size() != gt.size())
        throw DimensionError("metric_acc: prediction length mismatch");
    const double diameter = max_pairwise_distance(pair.target);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const Vec3& p = pair.target.positions.at(static_cast<std::size_t>(pred[i]));
        const Vec3& g = pair.target.positions.at(static_cast<std::size_t>(gt[i]));
        const double dx = p[0] - g[0], dy = p[1] - g[1], dz = p[2] - g[2];
        if (std::sqrt(dx * dx + dy * dy + dz * dz) < eps * diameter) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

std::vector<ShapePair> load_dataset(const std::filesystem::path& dir) {
    const std::filesystem::path pairs_dir = dir / "pairs";
    if (!std::filesystem::is_directory(pairs_dir))
        throw IoError("load_dataset: missing pairs directory under " + dir.string());
    std::vector<std::filesystem::path> entries;
    for (const auto& e : std::filesystem::directory_iterator(pairs_dir))
        if (e.is_directory()) entries.push_back(e.path());
    std::sort(entries.begin(), entries.end());
    if (entries.empty()) throw IoError("load_dataset: no pairs in " + pairs_dir.string());
    std::vector<ShapePair> out;
    out.reserve(entries.size());
    for (const auto& p : entries) {
        ShapePair pair;
        pair.source = load_cloud(p / "source.ply", CloudFormat::Ply);
        pair.target = load_cloud(p / "target.ply", CloudFormat::Ply);
        const std::filesystem::path gt_path = p / "gt.txt";
        if (std::filesystem::exists(gt_path)) {
            std::ifstream in(gt_path);
            if (!in) throw IoError("cannot open " + gt_path.string());
            Correspondence gt;
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
                int idx = 0;
                std::istringstream ls(line);
                if (!(ls >> idx))
                    throw ParseError(gt_path.string() + ":" + std::to_string(lineno) +
                                     ": expected an index, got '" + line + "'");
                if (idx < 0 || static_cast<std::size_t>(idx) >= pair.target.size())
                    throw ParseError(gt_path.string() + ":" + std::to_string(lineno) +
                                     ": index " + std::to_string(idx) + " out of range");
                gt.push_back(idx);
            }
            if (gt.size() != pair.source.size())
                throw ParseError(gt_path.string() + ": " + std::to_string(gt.size()) +
                                 " indices for " + std::to_string(pair.source.size()) +
                                 " source points");
            pair.ground_truth = std::move(gt);
        }
        out.push_back(std::move(pair));
    }
    return out;
}

void save_dataset(const std::vector<ShapePair>& pairs, const std::filesystem::path& dir) {
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        char name[16];
        std::snprintf(name, sizeof name, "%04zu", i);
        const std::filesystem::path pair_dir = dir / "pairs" / name;
        std::filesystem::create_directories(pair_dir);
        save_cloud(pairs[i].source, pair_dir / "source.ply", CloudFormat::Ply);
        save_cloud(pairs[i].target, pair_dir / "target.ply", CloudFormat::Ply);
        if (pairs[i].ground_truth) {
            std::ofstream out(pair_dir / "gt.txt");
            if (!out) throw IoError("cannot write " + (pair_dir / "gt.txt").string());
            for (int idx : *pairs[i].ground_truth) out << idx << '\n';
        }
    }
}

}  // namespace tacorr
