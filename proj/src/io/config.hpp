// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>

#include <json.hpp>

#include "adapters/adapters.hpp"
#include "data/dataset.hpp"
#include "data/synthetic.hpp"
#include "io/checkpoint.hpp"
#include "model/model.hpp"
#include "training/training.hpp"

namespace m2a::io {

struct AdapterOptions {
    std::size_t lora_rank = 4;
    adapters::ModuleKind fine_kind = adapters::ModuleKind::Krona;
    std::size_t krona_factor = 0;
    bool share_c_per_attribute = true;
    bool share_coarse_across_attributes = true;
    double init_bound = 0.0;
};

/// Backbone defaults with the data-dependent sizes left to resolution.
model::BackboneConfig default_backbone();

/// Everything a run needs. Backbone vocab_size, num_classes and
/// max_seq_len of 0 are resolved from the data.
struct RunConfig {
    data::SyntheticConfig synthetic;
    model::BackboneConfig backbone = default_backbone();
    AdapterOptions adapters;
    model::PretrainConfig pretrain;
    training::TrainConfig train;
    adapters::Strategy strategy = adapters::Strategy::Fine;
    Dtype checkpoint_dtype = Dtype::F64;
    /// Master seed for model init, pretraining and training; the data
    /// generator keeps its own `synthetic.seed`.
    std::uint64_t seed = 0;
};

/// Copies the master seed into the per-stage seeds.
void apply_seed(RunConfig& config, std::uint64_t seed);

nlohmann::json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

/// Fills data-dependent backbone fields from the schema and the longest sample.
model::BackboneConfig resolve_backbone(const RunConfig& config, const data::Schema& schema,
                                       std::size_t longest_sample);
std::size_t longest_sample(const data::Dataset& dataset);

adapters::BankConfig bank_config(const RunConfig& config, const data::Schema& schema);

std::unique_ptr<model::Model> build_model(const RunConfig& config, const data::Schema& schema,
                                          std::size_t longest_sample);

/// Snapshot of every model tensor; the checkpoint config carries the run
/// config (with the resolved backbone) and the schema.
Checkpoint model_checkpoint(const model::Model& model, const RunConfig& config, const data::Schema& schema,
                            nlohmann::json info = nlohmann::json::object());

/// Rebuilds the model stored in `ckpt`.
std::unique_ptr<model::Model> model_from_checkpoint(const Checkpoint& ckpt);
RunConfig run_config_of(const Checkpoint& ckpt);
data::Schema schema_of(const Checkpoint& ckpt);

/// Copies matching tensors into `model`. With `require_all`, a model
/// tensor missing from the checkpoint is an error. Returns the count copied.
std::size_t load_tensors(model::Model& model, const Checkpoint& ckpt, bool require_all);

}  // namespace m2a::io
