// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapters/adapters.hpp"
#include "data/dataset.hpp"
#include "model/model.hpp"
#include "numerics/autograd.hpp"
#include "training/optimizer.hpp"

namespace m2a::training {

struct TrainConfig {
    /// Weight of the text-generation term in the multitask loss.
    double alpha = 0.5;
    /// Weight of the NN† multitask loss in the joint objective.
    double lambda_c = 0.5;
    double kl_weight = 1.0;
    /// Detach NN's logits inside the KL term.
    bool stop_grad_teacher = false;
    AdamWConfig optim;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 20;
    std::size_t patience = 3;
    std::size_t separation_max_epochs = 20;
    bool separation = true;
    double mask_ratio = 0.15;
    bool bert_style_mask = false;
    /// Mix unlabeled samples into the batches (generation term only).
    bool unlabeled_mix = false;
    /// Views removed from NN and NN† (ablations).
    adapters::ViewMask mask;
    std::uint64_t seed = 0;
};

void validate(const TrainConfig& config);

/// Samples of one step plus the mask seed of each.
struct Batch {
    std::vector<const data::Sample*> samples;
    std::vector<std::uint64_t> mask_seeds;
};

Batch make_batch(std::span<const data::Sample> samples, std::uint64_t seed);

/// Forward results of one composition over a batch.
struct ViewOutput {
    num::Var cls_logits;  // [B×K]
    std::vector<int> labeled_rows;
    std::vector<int> labels;
    num::Var lm_logits;  // [N×V] over every scored position; invalid if none
    std::vector<int> lm_targets;
};

ViewOutput forward_view(const model::Model& model, num::Tape& tape, const Batch& batch, adapters::Strategy mode,
                        const TrainConfig& config);

struct MtlTerms {
    num::Var total;
    num::Var cls;
    num::Var gen;
};

/// CE over labeled rows + alpha · token-mean CE over generation targets.
/// Absent terms are constant zeros.
MtlTerms mtl_loss(num::Tape& tape, const ViewOutput& view, double alpha);
MtlTerms mtl_loss(const model::Model& model, num::Tape& tape, const Batch& batch, adapters::Strategy mode,
                  const TrainConfig& config);

enum class Phase { Joint, Separation, Single };

std::string to_string(Phase p);

struct LossBreakdown {
    Phase phase = Phase::Joint;
    std::size_t step = 0;
    double total = 0.0;
    double nn_total = 0.0, nn_cls = 0.0, nn_gen = 0.0;
    double gen_total = 0.0, gen_cls = 0.0, gen_gen = 0.0;
    double kl = 0.0;
    double grad_norm = 0.0;
};

nlohmann::json to_json(const LossBreakdown& b);

/// Eq.-10 objective on one batch: L(NN) + λ_c·L(NN†) + w·KL(NN ‖ NN†).
struct JointTerms {
    num::Var total;
    MtlTerms nn;
    MtlTerms general;
    num::Var kl;
};

JointTerms joint_loss(const model::Model& model, num::Tape& tape, const Batch& batch, const TrainConfig& config);

/// FNV-1a over the raw bytes of the parameters' values.
std::uint64_t checksum(std::span<const num::ParamPtr> params);

struct StopTrace {
    /// Dev accuracy before training and after every epoch.
    std::vector<double> dev_accuracy;
    double best = 0.0;
    /// Index into dev_accuracy of the restored state.
    std::size_t best_index = 0;
    std::size_t steps = 0;
    bool stopped_early = false;
};

struct FitReport {
    StopTrace joint;
    StopTrace separation;
    double general_dev_at_separation_start = 0.0;
    double general_dev_after_separation = 0.0;
    std::vector<LossBreakdown> steps;
};

/// Joint learning of NN (Fine) and NN† (General), then module separation.
///
/// The base model is frozen on construction. Early stopping tracks dev
/// accuracy and restores the best state seen, including the state before
/// the first epoch.
class JointTrainer {
public:
    JointTrainer(model::Model& model, TrainConfig config);

    Phase phase() const { return phase_; }
    bool converged() const { return converged_; }
    const TrainConfig& config() const { return config_; }

    std::vector<num::ParamPtr> group(adapters::Granularity g) const;
    std::vector<num::ParamPtr> heads() const;

    LossBreakdown joint_step(const Batch& batch);
    /// Only c' is updated.
    LossBreakdown separation_step(const Batch& batch);

    /// Joint epochs with early stopping on NN dev accuracy.
    StopTrace run_joint(const data::Dataset& train, const data::Dataset& dev, const data::Dataset* unlabeled = nullptr);
    /// Switches to the separation phase. Throws StateError before NN converged.
    void enter_separation();
    /// Separation epochs with early stopping on NN† dev accuracy.
    StopTrace separation_phase(const data::Dataset& train, const data::Dataset& dev,
                               const data::Dataset* unlabeled = nullptr);
    /// run_joint, then separation_phase when enabled.
    FitReport fit(const data::Dataset& train, const data::Dataset& dev, const data::Dataset* unlabeled = nullptr);

    /// Marks NN as converged without running the joint loop.
    void mark_converged() { converged_ = true; }

    const std::vector<LossBreakdown>& history() const { return history_; }
    /// Writes one JSON record per step and per evaluation.
    void write_log(const std::filesystem::path& path) const;

private:
    void set_trainable_for(Phase p);
    LossBreakdown apply(const JointTerms& terms, num::Tape& tape, Phase p);
    StopTrace loop(const data::Dataset& train, const data::Dataset& dev, const data::Dataset* unlabeled,
                   std::size_t max_epochs, adapters::Strategy metric, const std::vector<num::ParamPtr>& watched,
                   const std::function<LossBreakdown(const Batch&)>& step);

    model::Model& model_;
    TrainConfig config_;
    AdamW optimizer_;
    Phase phase_ = Phase::Joint;
    bool converged_ = false;
    std::size_t step_ = 0;
    std::uint64_t epoch_counter_ = 0;
    std::vector<LossBreakdown> history_;
    std::vector<nlohmann::json> log_;
};

/// Trains the adapters of one strategy alone (e.g. the coarse-only
/// baseline) with the multitask loss and early stopping.
StopTrace train_single(model::Model& model, adapters::Strategy mode, const TrainConfig& config,
                       const data::Dataset& train, const data::Dataset& dev,
                       const data::Dataset* unlabeled = nullptr, std::vector<LossBreakdown>* history = nullptr);

/// Dev accuracy of the fused model under `mode` with `mask`.
double dev_accuracy(const model::Model& model, const data::Dataset& dev, adapters::Strategy mode,
                    const adapters::ViewMask& mask, std::uint64_t seed = 0);

}  // namespace m2a::training
