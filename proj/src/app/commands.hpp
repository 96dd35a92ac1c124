// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "io/config.hpp"

namespace m2a::app {

namespace fs = std::filesystem;

/// Writes train/dev/test(/unlabeled).jsonl, schema.json and config.json.
nlohmann::json cmd_generate(const io::RunConfig& config, const fs::path& out_dir);

/// Pretrains a base model on the text of `data_dir`/train.jsonl (plus
/// unlabeled.jsonl when present).
nlohmann::json cmd_pretrain(const io::RunConfig& config, const fs::path& data_dir, const fs::path& out_checkpoint);

struct TrainPaths {
    fs::path data_dir;
    fs::path base_checkpoint;
    fs::path out_checkpoint;
    /// Defaults to <out_checkpoint>.log.jsonl.
    std::optional<fs::path> log;
};

/// Joint training plus module separation on top of a pretrained base.
nlohmann::json cmd_train(const io::RunConfig& config, const TrainPaths& paths);

struct EvalArgs {
    fs::path data_dir;
    std::string split = "test";
    fs::path checkpoint;
    adapters::Strategy strategy = adapters::Strategy::Fine;
    std::uint64_t seed = 0;
    bool ensemble = false;
    std::optional<fs::path> report;
};

/// EvalReport JSON; the human-readable table goes to `table` when given.
nlohmann::json cmd_eval(const EvalArgs& args, std::string* table = nullptr);

/// Full model versus: no coarse view, no fine view per attribute, alpha = 0.
nlohmann::json cmd_ablate(const io::RunConfig& config, const fs::path& data_dir, const fs::path& base_checkpoint,
                          const fs::path& out_dir, std::string* table = nullptr);

struct ParamsArgs {
    std::vector<std::size_t> domains;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    std::size_t rank = 0;
    std::size_t krona_factor = 0;
};

/// Both budget formulas; small schemas are cross-checked against an
/// allocated bank.
nlohmann::json cmd_params(const ParamsArgs& args);
ParamsArgs params_args_from(const io::RunConfig& config);

}  // namespace m2a::app
