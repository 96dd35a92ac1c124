// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adapters/adapters.hpp"
#include "data/dataset.hpp"
#include "numerics/autograd.hpp"

namespace m2a::model {

enum class LmMode { Mlm, Arm };
/// Row read by the classifier. Auto = first for MLM, last for ARM.
enum class ClsPosition { Auto, First, Last };

std::string to_string(LmMode m);
LmMode parse_lm_mode(const std::string& s);
std::string to_string(ClsPosition p);
ClsPosition parse_cls_position(const std::string& s);

/// Adapter injection points inside one layer.
enum class SiteKind { Query, Value, Intermediate };

std::string to_string(SiteKind k);
SiteKind parse_site_kind(const std::string& s);

struct BackboneConfig {
    std::size_t num_layers = 2;
    std::size_t d_model = 64;
    std::size_t num_heads = 4;
    std::size_t d_ff = 128;
    std::size_t vocab_size = 500;
    /// Includes the leading [CLS]/BOS token.
    std::size_t max_seq_len = 64;
    std::size_t num_classes = 5;
    LmMode mode = LmMode::Mlm;
    ClsPosition cls_position = ClsPosition::Auto;
    double dropout = 0.0;
    std::vector<SiteKind> coarse_sites{SiteKind::Query, SiteKind::Value, SiteKind::Intermediate};
    std::vector<SiteKind> fine_sites{SiteKind::Query, SiteKind::Value};
    std::uint64_t seed = 0;
};

void validate(const BackboneConfig& config);

/// Options for one forward pass.
struct RunOptions {
    /// Produce language-model logits and targets next to the class logits.
    bool generate = false;
    double mask_ratio = 0.15;
    bool bert_style_mask = false;
    std::uint64_t mask_seed = 0;
    /// Enables dropout.
    bool train = false;
    std::uint64_t dropout_seed = 0;
};

struct RunOutput {
    num::Var cls_logits;  // [1×K]
    /// [n×V] logits at scored positions; invalid when nothing is scored.
    num::Var lm_logits;
    std::vector<int> lm_targets;
};

/// Per-site composed deltas for one sample; empty = base model.
using SiteDeltas = std::vector<adapters::ComposedDelta>;

/// Frozen-or-trainable backbone, heads and the adapter bank.
///
/// Base tensors are named "embed/tok", "embed/pos", "layer{i}/{ln1|ln2}/{g|b}",
/// "layer{i}/{q|k|v|o|ff1|ff2}/{W|b}", "final_ln/{g|b}", and the heads
/// "head/cls/{W|b}", "head/lm/{W|b}". Adapter sites are "layer{i}/{q|v|ff1}".
class Model {
public:
    Model(BackboneConfig config, adapters::BankConfig bank_config);

    const BackboneConfig& config() const { return config_; }
    ClsPosition cls_position() const;
    const adapters::AdapterBank& bank() const { return bank_; }
    adapters::AdapterBank& bank() { return bank_; }

    /// Backbone tensors (embeddings, layers, final norm).
    const std::vector<num::ParamPtr>& base_parameters() const { return base_; }
    const std::vector<num::ParamPtr>& head_parameters() const { return heads_; }
    std::vector<num::ParamPtr> adapter_parameters() const { return bank_.parameters(); }
    /// Base, heads, then adapters.
    std::vector<num::ParamPtr> all_parameters() const;
    num::ParamPtr find(const std::string& name) const;

    void set_base_trainable(bool on);
    void set_heads_trainable(bool on);

    SiteDeltas deltas(const adapters::CompositionContext& ctx) const;

    /// Model input for `tokens`: [CLS]/BOS followed by the tokens.
    std::vector<int> input_ids(std::span<const int> tokens) const;
    /// Final hidden states [(T+1)×d] for already prefixed ids.
    num::Var encode(num::Tape& tape, std::span<const int> ids, const SiteDeltas* deltas,
                    const RunOptions& options = {}) const;
    /// One sample through the backbone with optional generation targets.
    RunOutput run(num::Tape& tape, std::span<const int> tokens, const SiteDeltas* deltas,
                  const RunOptions& options = {}) const;

    /// Class logits [B×K], one context per sample (nullptr = base model).
    num::Tensor classify(const std::vector<std::vector<int>>& batch,
                         const std::vector<adapters::CompositionContext>* contexts) const;
    /// Token logits at `positions` of the prefixed MLM input.
    num::Tensor mlm_logits(std::span<const int> ids, std::span<const int> positions, const SiteDeltas* deltas) const;
    /// Next-token logits [(T+1)×V] for the prefixed ARM input.
    num::Tensor arm_logits(std::span<const int> ids, const SiteDeltas* deltas) const;

private:
    num::ParamPtr add_param(std::vector<num::ParamPtr>& group, const std::string& name, num::Tensor value);
    num::Var linear(num::Tape& tape, num::Var x, const std::string& prefix) const;
    num::Var adapted(num::Tape& tape, num::Var x, std::size_t layer, SiteKind kind, const std::string& prefix,
                     const SiteDeltas* deltas) const;
    num::Var lm_head(num::Tape& tape, num::Var rows) const;

    BackboneConfig config_;
    std::vector<num::ParamPtr> base_;
    std::vector<num::ParamPtr> heads_;
    std::map<std::string, num::ParamPtr> by_name_;
    adapters::AdapterBank bank_;
    /// site index per (layer, kind); -1 when not injected.
    std::vector<std::array<int, 3>> site_of_;
};

/// Injection sites implied by the backbone config.
std::vector<adapters::SiteSpec> injection_sites(const BackboneConfig& config);

adapters::BankConfig bank_config_for(const data::Schema& schema, std::size_t lora_rank, std::uint64_t seed);

struct PretrainConfig {
    std::size_t steps = 500;
    std::size_t batch_size = 16;
    double learning_rate = 1e-3;
    double mask_ratio = 0.15;
    std::uint64_t seed = 0;
};

struct PretrainReport {
    std::vector<double> losses;
};

/// Trains the base weights and LM head with the mode's LM objective only.
PretrainReport pretrain_base(Model& model, const data::Dataset& corpus, const PretrainConfig& config);

/// Mean LM loss of the base model (no adapters) over `corpus`.
double lm_loss(const Model& model, const data::Dataset& corpus, double mask_ratio, std::uint64_t seed);

}  // namespace m2a::model
