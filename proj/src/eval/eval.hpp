// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "adapters/adapters.hpp"
#include "data/dataset.hpp"
#include "model/model.hpp"

namespace m2a::eval {

struct PredictOptions {
    adapters::Strategy mode = adapters::Strategy::Fine;
    /// Seed for Rand draws; sample i uses mix(seed, i).
    std::uint64_t seed = 0;
    adapters::ViewMask mask;
    /// Unseen fine domains fall back to c' (counted) instead of failing.
    bool fallback_unknown_domains = true;
};

struct Predictions {
    std::vector<int> labels;
    int fallbacks = 0;
};

/// Composition context of sample `index` under `options`.
adapters::CompositionContext sample_context(const model::Model& model, const data::Sample& sample,
                                            std::size_t index, const PredictOptions& options);

/// Class logits [B×K] under the fused (weight-averaged) model.
num::Tensor fused_logits(const model::Model& model, const std::vector<data::Sample>& samples,
                         const PredictOptions& options, int* fallbacks = nullptr);

/// Argmax of the fused model's logits.
Predictions predict_fused(const model::Model& model, const std::vector<data::Sample>& samples,
                          const PredictOptions& options);

/// Probabilities [B×K] averaged over single-view models, each view weighted
/// like its slot in the fused context. Views resolving to the same modules
/// at every site are evaluated once with their weights summed.
num::Tensor predict_ensemble(const model::Model& model, const std::vector<data::Sample>& samples,
                             const PredictOptions& options);

struct DomainAccuracy {
    std::size_t correct = 0;
    std::size_t total = 0;
};

struct EvalReport {
    double accuracy = 0.0;
    double rmse = 0.0;
    double macro_f1 = 0.0;
    std::size_t count = 0;
    /// per_domain[a][d]; filled by `evaluate`.
    std::vector<std::vector<DomainAccuracy>> per_domain;
    std::vector<std::string> attribute_names;
    std::string strategy;
    std::uint64_t seed = 0;
    int fallbacks = 0;
};

/// Acc, RMSE over class indices and Macro-F1 averaged over the classes that
/// occur in gold or predictions.
EvalReport metrics(const std::vector<int>& gold, const std::vector<int>& predicted);

/// Metrics plus per-domain accuracy for the labeled samples of `dataset`.
EvalReport evaluate(const model::Model& model, const data::Dataset& dataset, const PredictOptions& options);

nlohmann::json to_json(const EvalReport& report);
std::string to_table(const EvalReport& report);

}  // namespace m2a::eval
