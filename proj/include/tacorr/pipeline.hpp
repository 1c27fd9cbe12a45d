#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "tacorr/encoder.hpp"
#include "tacorr/optim.hpp"
#include "tacorr/template_assist.hpp"

namespace tacorr {

struct ShapePair {
    PointCloud source;
    PointCloud target;
    std::optional<Correspondence> ground_truth;  // per source point
};

// Both clouds centered and scaled; ground truth carried over unchanged.
ShapePair normalized(const ShapePair& pair);

// Model dimensions plus the per-module enable flags (ablation rows).
struct ModelConfig {
    std::size_t points = 128;
    std::size_t feature_dim = 64;
    std::size_t layers = 2;
    std::size_t templates = 2;
    std::size_t template_points = 128;
    std::size_t knn_k = 10;
    double gumbel_temperature = 1.0;
    double template_embedding_std = 0.02;
    // Weight of the reverse (transitive-learns-direct) consistency direction
    // inside the trans term, relative to the forward direction. When
    // trans_reverse_ramp_start is in [0,1), the weight ramps linearly from 0
    // starting at that training progress; negative keeps it constant.
    double trans_reverse_weight = 1.0;
    double trans_reverse_ramp_start = -1.0;
    bool use_template_generation = true;
    bool use_tc_loss = true;
    bool use_selector = true;
    bool use_fusion = true;
    bool use_trans_loss = true;
    // Whether the align loss is also applied to the selected template's
    // embeddings (template pass), in addition to the point-cloud pass.
    bool align_templates = true;
    bool encoder_absolute_coords = true;
    // When set, correlation fusion consumes a detached view of the selected
    // template's embeddings: the bank trains from the geometric losses only,
    // keeping fast embedding movement out of the point-feature path.
    bool fusion_detaches_embeddings = false;

    bool operator==(const ModelConfig&) const = default;
};

struct LossWeights {
    double trans = 0.5;
    double align = 0.5;
    double tc = 1.0;
    double constr = 1.0;
};

struct Model {
    ModelConfig cfg;
    EncoderParams encoder;
    AlignerParams aligner;
    TemplateBank bank;
    FusionParams fusion;

    static Model init(const ModelConfig& cfg, const std::vector<PointCloud>& seed_clouds,
                      Rng& rng);

    std::vector<Parameter*> parameters();
    std::vector<Parameter*> encoder_parameters();
    std::vector<Parameter*> template_parameters();
};

// How the selected template's contribution is wired into the graph.
// StraightThrough multiplies by the hard Gumbel weight so selector scores
// receive gradient; Deterministic picks by argmax with no selector gradient
// (eval mode, and the finite-difference harness where the straight-through
// estimator is deliberately biased).
enum class SelectorRouting { StraightThrough, Deterministic };

struct LossBreakdown {
    double total = 0.0;
    double trans = 0.0;
    double align = 0.0;
    double tc = 0.0;
    double constr = 0.0;
    std::size_t template_index = static_cast<std::size_t>(-1);
};

struct TotalLoss {
    Var loss;
    LossBreakdown breakdown;
    // Detached distributions used by the trans term (empty when it is off).
    // Exposed so a finite-difference harness can hold them fixed while
    // probing.
    Tensor transitive_target;   // S_XTY as seen by the direct side
    Tensor direct_target;       // softmax(S_XY) as seen by the transitive side
};

struct TotalLossOptions {
    SelectorRouting routing = SelectorRouting::StraightThrough;
    Rng* rng = nullptr;
    // Training progress in [0,1] for scheduled loss shaping.
    double progress = 1.0;
    // When set, the trans term uses these as its (constant) targets instead
    // of the freshly computed, detached ones. The finite-difference oracle of
    // a stop-gradient graph is the derivative with detached values frozen.
    const Tensor* frozen_transitive_target = nullptr;
    const Tensor* frozen_direct_target = nullptr;
};

// Cross- and self-construction chamfer term over fused features.
Var construction_loss(Tape& tape, const PointCloud& x, const PointCloud& y, Var fused_x,
                      Var fused_y, std::size_t k);

// Full objective: encode -> select -> fuse -> weighted sum of the four terms.
// Terms whose weight is zero (or whose module is disabled) are not built.
TotalLoss total_loss(Tape& tape, Model& model, const ShapePair& pair,
                     const LossWeights& weights, const TotalLossOptions& options);
TotalLoss total_loss(Tape& tape, Model& model, const ShapePair& pair,
                     const LossWeights& weights, SelectorRouting routing, Rng* rng);

struct TrainConfig {
    ModelConfig model;
    LossWeights weights;
    double lr = 5e-4;
    double weight_decay = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::size_t batch_size = 2;
    std::size_t steps = 800;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // 0 = final checkpoint only
    // Global gradient-norm clip applied before each optimizer step (0 = off).
    double max_grad_norm = 5.0;
    // Cosine learning-rate decay to lr_floor_fraction * lr with a short
    // linear warmup; false keeps the rate constant.
    bool cosine_lr = true;
    std::size_t warmup_steps = 50;
    double lr_floor_fraction = 0.05;
    // Template-embedding schedule: frozen for the first warm fraction of the
    // run (features form against a quiet bank), then trained at a constant
    // mult * lr rate. The bank needs to traverse from near-zero init to O(1)
    // rows, and its gradient signal is only clean once features settle.
    double template_embedding_lr_mult = 1.0;
    double template_embedding_warm_fraction = 0.0;
};

struct LossRow {
    std::size_t step = 0;
    LossBreakdown losses;
};

using CheckpointHook = std::function<void(std::size_t step, const Model&)>;

// AdamW over all parameters, one sampled pair per micro-step, gradients
// averaged over the batch. Deterministic under a fixed seed.
std::vector<LossRow> train(Model& model, const std::vector<ShapePair>& dataset,
                           const TrainConfig& config, const CheckpointHook& hook = {});

// Eq. 7: per-source-point argmax over the direct similarity.
Correspondence infer(Model& model, const ShapePair& pair);
// Argmax over the transitive similarity instead (slower; comparison path).
Correspondence infer_transitive(Model& model, const ShapePair& pair);

// Row argmax with ties broken by the lower index.
Correspondence correspondence_from_similarity(const Tensor& similarity);

// Eq. 8: mean Euclidean distance between predicted and true target points.
double metric_err(const Correspondence& pred, const ShapePair& pair);
// Eq. 9: fraction within eps times the target diameter.
double metric_acc(const Correspondence& pred, const ShapePair& pair, double eps);

// Dataset directory layout: pairs/<id>/{source.ply,target.ply,gt.txt}.
std::vector<ShapePair> load_dataset(const std::filesystem::path& dir);
void save_dataset(const std::vector<ShapePair>& pairs, const std::filesystem::path& dir);

}  // namespace tacorr
