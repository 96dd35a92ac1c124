// SPDX-License-Identifier: Apache-2.0
#include "model/model.hpp"

#include <algorithm>
#include <cmath>

#include "common/error.hpp"
#include "common/random.hpp"
#include "numerics/ops.hpp"
#include "training/optimizer.hpp"

namespace m2a::model {

using num::Tape;
using num::Tensor;
using num::Var;

std::string to_string(LmMode m) { return m == LmMode::Mlm ? "mlm" : "arm"; }

LmMode parse_lm_mode(const std::string& s) {
    if (s == "mlm") return LmMode::Mlm;
    if (s == "arm") return LmMode::Arm;
    throw InvalidArgument("unknown mode '" + s + "' (expected mlm|arm)");
}

std::string to_string(ClsPosition p) {
    switch (p) {
        case ClsPosition::First: return "first";
        case ClsPosition::Last: return "last";
        default: return "auto";
    }
}

ClsPosition parse_cls_position(const std::string& s) {
    if (s == "auto") return ClsPosition::Auto;
    if (s == "first") return ClsPosition::First;
    if (s == "last") return ClsPosition::Last;
    throw InvalidArgument("unknown cls position '" + s + "' (expected auto|first|last)");
}

std::string to_string(SiteKind k) {
    switch (k) {
        case SiteKind::Query: return "query";
        case SiteKind::Value: return "value";
        default: return "intermediate";
    }
}

SiteKind parse_site_kind(const std::string& s) {
    if (s == "query") return SiteKind::Query;
    if (s == "value") return SiteKind::Value;
    if (s == "intermediate") return SiteKind::Intermediate;
    throw InvalidArgument("unknown injection site '" + s + "' (expected query|value|intermediate)");
}

namespace {

const char* site_suffix(SiteKind k) {
    switch (k) {
        case SiteKind::Query: return "q";
        case SiteKind::Value: return "v";
        default: return "ff1";
    }
}

bool contains(const std::vector<SiteKind>& v, SiteKind k) { return std::find(v.begin(), v.end(), k) != v.end(); }

std::string layer_prefix(std::size_t i) { return "layer" + std::to_string(i) + "/"; }

Tensor uniform_tensor(Rng& rng, num::Shape shape, double bound) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.data()) x = rng.uniform(-bound, bound);
    return t;
}

Tensor normal_tensor(Rng& rng, num::Shape shape, double stddev) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& x : t.data()) x = stddev * rng.normal();
    return t;
}

}  // namespace

void validate(const BackboneConfig& c) {
    if (c.num_layers == 0 || c.d_model == 0 || c.num_heads == 0 || c.d_ff == 0) {
        throw InvalidArgument("backbone dimensions must be positive");
    }
    if (c.d_model % c.num_heads != 0) {
        throw InvalidArgument("d_model " + std::to_string(c.d_model) + " not divisible by " +
                              std::to_string(c.num_heads) + " heads");
    }
    if (c.vocab_size <= static_cast<std::size_t>(data::kFirstWordId)) throw InvalidArgument("vocabulary too small");
    if (c.max_seq_len < 2) throw InvalidArgument("max_seq_len must be at least 2");
    if (c.num_classes < 2) throw InvalidArgument("need at least two classes");
    if (c.dropout < 0.0 || c.dropout >= 1.0) throw InvalidArgument("dropout must be in [0, 1)");
}

std::vector<adapters::SiteSpec> injection_sites(const BackboneConfig& c) {
    std::vector<adapters::SiteSpec> sites;
    for (std::size_t i = 0; i < c.num_layers; ++i) {
        for (SiteKind k : {SiteKind::Query, SiteKind::Value, SiteKind::Intermediate}) {
            const bool coarse = contains(c.coarse_sites, k);
            const bool fine = contains(c.fine_sites, k);
            if (!coarse && !fine) continue;
            const std::size_t d_out = k == SiteKind::Intermediate ? c.d_ff : c.d_model;
            sites.push_back({layer_prefix(i) + site_suffix(k), c.d_model, d_out, coarse, fine});
        }
    }
    return sites;
}

adapters::BankConfig bank_config_for(const data::Schema& schema, std::size_t lora_rank, std::uint64_t seed) {
    adapters::BankConfig bc;
    for (const auto& a : schema.attributes) bc.attributes.push_back({a.name, a.num_domains});
    bc.lora_rank = lora_rank;
    bc.seed = seed;
    return bc;
}

Model::Model(BackboneConfig config, adapters::BankConfig bank_config) : config_(std::move(config)) {
    validate(config_);
    const auto d = config_.d_model, f = config_.d_ff, v = config_.vocab_size;
    Rng rng(Rng::mix(config_.seed, 0x6261736555ULL));
    auto xavier = [&](std::size_t in, std::size_t out) {
        return uniform_tensor(rng, {in, out}, std::sqrt(6.0 / static_cast<double>(in + out)));
    };

    add_param(base_, "embed/tok", normal_tensor(rng, {v, d}, 0.1));
    add_param(base_, "embed/pos", normal_tensor(rng, {config_.max_seq_len, d}, 0.1));
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
        const std::string p = layer_prefix(i);
        add_param(base_, p + "ln1/g", Tensor::filled({d}, 1.0));
        add_param(base_, p + "ln1/b", Tensor::zeros({d}));
        for (const char* w : {"q", "k", "v", "o"}) {
            add_param(base_, p + w + "/W", xavier(d, d));
            add_param(base_, p + w + "/b", Tensor::zeros({d}));
        }
        add_param(base_, p + "ln2/g", Tensor::filled({d}, 1.0));
        add_param(base_, p + "ln2/b", Tensor::zeros({d}));
        add_param(base_, p + "ff1/W", xavier(d, f));
        add_param(base_, p + "ff1/b", Tensor::zeros({f}));
        add_param(base_, p + "ff2/W", xavier(f, d));
        add_param(base_, p + "ff2/b", Tensor::zeros({d}));
    }
    add_param(base_, "final_ln/g", Tensor::filled({d}, 1.0));
    add_param(base_, "final_ln/b", Tensor::zeros({d}));
    add_param(heads_, "head/cls/W", xavier(d, config_.num_classes));
    add_param(heads_, "head/cls/b", Tensor::zeros({config_.num_classes}));
    add_param(heads_, "head/lm/W", xavier(d, v));
    add_param(heads_, "head/lm/b", Tensor::zeros({v}));

    const auto sites = injection_sites(config_);
    bank_ = adapters::AdapterBank(std::move(bank_config), sites);
    site_of_.assign(config_.num_layers, {-1, -1, -1});
    for (std::size_t i = 0; i < config_.num_layers; ++i)
        for (SiteKind k : {SiteKind::Query, SiteKind::Value, SiteKind::Intermediate}) {
            if (auto idx = bank_.site_index(layer_prefix(i) + site_suffix(k)))
                site_of_[i][static_cast<std::size_t>(k)] = static_cast<int>(*idx);
        }
}

num::ParamPtr Model::add_param(std::vector<num::ParamPtr>& group, const std::string& name, Tensor value) {
    auto p = std::make_shared<num::Parameter>(name, std::move(value));
    group.push_back(p);
    by_name_[name] = p;
    return p;
}

ClsPosition Model::cls_position() const {
    if (config_.cls_position != ClsPosition::Auto) return config_.cls_position;
    return config_.mode == LmMode::Mlm ? ClsPosition::First : ClsPosition::Last;
}

std::vector<num::ParamPtr> Model::all_parameters() const {
    std::vector<num::ParamPtr> out = base_;
    out.insert(out.end(), heads_.begin(), heads_.end());
    for (auto& p : bank_.parameters()) out.push_back(p);
    return out;
}

num::ParamPtr Model::find(const std::string& name) const {
    if (auto it = by_name_.find(name); it != by_name_.end()) return it->second;
    for (auto& p : bank_.parameters())
        if (p->name == name) return p;
    return nullptr;
}

void Model::set_base_trainable(bool on) {
    for (auto& p : base_) p->trainable = on;
}

void Model::set_heads_trainable(bool on) {
    for (auto& p : heads_) p->trainable = on;
}

SiteDeltas Model::deltas(const adapters::CompositionContext& ctx) const {
    SiteDeltas out;
    out.reserve(bank_.site_count());
    for (std::size_t s = 0; s < bank_.site_count(); ++s) out.emplace_back(bank_, s, ctx);
    return out;
}

std::vector<int> Model::input_ids(std::span<const int> tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size() + 1);
    ids.push_back(data::kClsId);
    ids.insert(ids.end(), tokens.begin(), tokens.end());
    return ids;
}

Var Model::linear(Tape& tape, Var x, const std::string& prefix) const {
    Var w = tape.param(*by_name_.at(prefix + "/W"));
    Var b = tape.param(*by_name_.at(prefix + "/b"));
    return num::add_bias(num::matmul(x, w), b);
}

Var Model::adapted(Tape& tape, Var x, std::size_t layer, SiteKind kind, const std::string& prefix,
                   const SiteDeltas* deltas) const {
    Var y = linear(tape, x, prefix);
    const int site = site_of_[layer][static_cast<std::size_t>(kind)];
    if (deltas == nullptr || site < 0) return y;
    const auto& delta = deltas->at(static_cast<std::size_t>(site));
    if (delta.empty()) return y;
    return num::add(y, delta.apply(x));
}

Var Model::lm_head(Tape& tape, Var rows) const { return linear(tape, rows, "head/lm"); }

Var Model::encode(Tape& tape, std::span<const int> ids, const SiteDeltas* deltas, const RunOptions& options) const {
    const std::size_t n = ids.size();
    if (n == 0) throw InvalidArgument("empty input sequence");
    if (n > config_.max_seq_len) {
        throw InvalidArgument("sequence length " + std::to_string(n) + " exceeds max_seq_len " +
                              std::to_string(config_.max_seq_len));
    }
    for (int t : ids)
        if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size)
            throw DataError("token id " + std::to_string(t) + " outside vocabulary");
    if (deltas != nullptr && deltas->size() != bank_.site_count()) {
        throw InvalidArgument("site delta count does not match the adapter bank");
    }

    const bool causal = config_.mode == LmMode::Arm;
    const double rate = options.train ? config_.dropout : 0.0;
    std::uint64_t drop_tag = 0;
    auto drop = [&](Var v) { return num::dropout(v, rate, Rng::mix(options.dropout_seed, ++drop_tag)); };

    Var x = num::add(num::embedding(tape.param(*by_name_.at("embed/tok")), ids),
                     num::slice_rows(tape.param(*by_name_.at("embed/pos")), 0, n));
    const std::size_t heads = config_.num_heads;
    const std::size_t dh = config_.d_model / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t i = 0; i < config_.num_layers; ++i) {
        const std::string p = layer_prefix(i);
        Var h = num::layer_norm(x, tape.param(*by_name_.at(p + "ln1/g")), tape.param(*by_name_.at(p + "ln1/b")));
        Var q = adapted(tape, h, i, SiteKind::Query, p + "q", deltas);
        Var k = linear(tape, h, p + "k");
        Var v = adapted(tape, h, i, SiteKind::Value, p + "v", deltas);
        std::vector<Var> outs;
        outs.reserve(heads);
        for (std::size_t hd = 0; hd < heads; ++hd) {
            Var qh = num::slice_cols(q, hd * dh, dh);
            Var kh = num::slice_cols(k, hd * dh, dh);
            Var vh = num::slice_cols(v, hd * dh, dh);
            Var scores = num::scale(num::matmul(qh, num::transpose(kh)), inv_sqrt);
            outs.push_back(num::matmul(num::softmax_rows(scores, causal), vh));
        }
        Var attn = heads == 1 ? outs.front() : num::concat_cols(outs);
        x = num::add(x, drop(linear(tape, attn, p + "o")));

        Var h2 = num::layer_norm(x, tape.param(*by_name_.at(p + "ln2/g")), tape.param(*by_name_.at(p + "ln2/b")));
        Var ff = num::gelu(adapted(tape, h2, i, SiteKind::Intermediate, p + "ff1", deltas));
        x = num::add(x, drop(linear(tape, ff, p + "ff2")));
    }
    return num::layer_norm(x, tape.param(*by_name_.at("final_ln/g")), tape.param(*by_name_.at("final_ln/b")));
}

RunOutput Model::run(Tape& tape, std::span<const int> tokens, const SiteDeltas* deltas,
                     const RunOptions& options) const {
    if (tokens.empty()) throw InvalidArgument("empty token sequence");
    std::vector<int> ids = input_ids(tokens);
    RunOutput out;
    std::vector<int> positions;
    if (options.generate && config_.mode == LmMode::Mlm) {
        data::MaskOptions mo;
        mo.protected_prefix = 1;
        mo.bert_style = options.bert_style_mask;
        mo.vocab_size = config_.vocab_size;
        auto masked = data::mask_tokens(ids, options.mask_ratio, options.mask_seed, mo);
        ids = std::move(masked.tokens);
        positions = std::move(masked.positions);
        out.lm_targets = std::move(masked.originals);
    }
    Var hidden = encode(tape, ids, deltas, options);
    const std::size_t row = cls_position() == ClsPosition::First ? 0 : ids.size() - 1;
    out.cls_logits = linear(tape, num::slice_rows(hidden, row, 1), "head/cls");
    if (!options.generate) return out;
    if (config_.mode == LmMode::Mlm) {
        if (!positions.empty()) out.lm_logits = lm_head(tape, num::gather_rows(hidden, positions));
    } else {
        // Row t sees ids[0..t] = BOS, tokens[0..t-1] and predicts tokens[t].
        out.lm_logits = lm_head(tape, num::slice_rows(hidden, 0, tokens.size()));
        out.lm_targets.assign(tokens.begin(), tokens.end());
    }
    return out;
}

Tensor Model::classify(const std::vector<std::vector<int>>& batch,
                       const std::vector<adapters::CompositionContext>* contexts) const {
    if (batch.empty()) throw InvalidArgument("empty batch");
    if (contexts != nullptr && contexts->size() != batch.size()) {
        throw InvalidArgument("need one composition context per sample");
    }
    const std::size_t k = config_.num_classes;
    Tensor out = Tensor::zeros({batch.size(), k});
    for (std::size_t i = 0; i < batch.size(); ++i) {
        Tape tape;
        std::optional<SiteDeltas> d;
        if (contexts != nullptr) d = deltas((*contexts)[i]);
        const auto r = run(tape, batch[i], d ? &*d : nullptr);
        const auto& v = r.cls_logits.value();
        for (std::size_t c = 0; c < k; ++c) out.at(i, c) = v[c];
    }
    return out;
}

Tensor Model::mlm_logits(std::span<const int> ids, std::span<const int> positions, const SiteDeltas* deltas) const {
    if (config_.mode != LmMode::Mlm) throw StateError("mlm_logits needs an MLM-mode model");
    Tape tape;
    Var hidden = encode(tape, ids, deltas);
    if (positions.empty()) return Tensor::zeros({1, config_.vocab_size});
    return lm_head(tape, num::gather_rows(hidden, positions)).value();
}

Tensor Model::arm_logits(std::span<const int> ids, const SiteDeltas* deltas) const {
    if (config_.mode != LmMode::Arm) throw StateError("arm_logits needs an ARM-mode model");
    Tape tape;
    return lm_head(tape, encode(tape, ids, deltas)).value();
}

// ---------------------------------------------------------------------------
// Pretraining

namespace {

/// Token-weighted LM loss of one sample, as (sum of CE, target count).
std::pair<Var, std::size_t> sample_lm_sum(const Model& model, Tape& tape, const data::Sample& x, double ratio,
                                          std::uint64_t seed) {
    RunOptions ro;
    ro.generate = true;
    ro.mask_ratio = ratio;
    ro.mask_seed = seed;
    const auto out = model.run(tape, x.tokens, nullptr, ro);
    if (!out.lm_logits.valid()) return {Var{}, 0};
    const auto n = out.lm_targets.size();
    return {num::scale(num::cross_entropy(out.lm_logits, out.lm_targets), static_cast<double>(n)), n};
}

}  // namespace

PretrainReport pretrain_base(Model& model, const data::Dataset& corpus, const PretrainConfig& config) {
    if (corpus.samples.empty()) throw DataError("pretraining corpus is empty");
    if (config.batch_size == 0) throw InvalidArgument("batch size must be positive");
    PretrainReport report;
    if (config.steps == 0) return report;

    std::vector<num::ParamPtr> params = model.base_parameters();
    for (const auto& p : model.head_parameters())
        if (p->name.rfind("head/lm/", 0) == 0) params.push_back(p);
    std::vector<bool> saved;
    for (const auto& p : params) {
        saved.push_back(p->trainable);
        p->trainable = true;
    }
    training::AdamWConfig oc;
    oc.learning_rate = config.learning_rate;
    oc.weight_decay = 0.0;
    oc.clip_norm = 1.0;
    training::AdamW opt(params, oc);
    Rng rng(Rng::mix(config.seed, 0x707265ULL));

    for (std::size_t step = 0; step < config.steps; ++step) {
        opt.zero_grad();
        Tape tape;
        std::vector<Var> sums;
        std::size_t count = 0;
        for (std::size_t b = 0; b < config.batch_size; ++b) {
            const auto& x = corpus.samples[rng.below(corpus.samples.size())];
            auto [s, n] = sample_lm_sum(model, tape, x, config.mask_ratio, rng.next());
            if (n == 0) continue;
            sums.push_back(s);
            count += n;
        }
        if (count == 0) continue;
        Var total = sums.front();
        for (std::size_t i = 1; i < sums.size(); ++i) total = num::add(total, sums[i]);
        Var loss = num::scale(total, 1.0 / static_cast<double>(count));
        tape.backward(loss);
        opt.step();
        report.losses.push_back(loss.value().item());
    }
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->trainable = saved[i];
    return report;
}

double lm_loss(const Model& model, const data::Dataset& corpus, double mask_ratio, std::uint64_t seed) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < corpus.samples.size(); ++i) {
        Tape tape;
        auto [s, n] = sample_lm_sum(model, tape, corpus.samples[i], mask_ratio, Rng::mix(seed, i));
        if (n == 0) continue;
        sum += s.value().item();
        count += n;
    }
    if (count == 0) throw DataError("no language-model targets in corpus");
    return sum / static_cast<double>(count);
}

}  // namespace m2a::model
