// SPDX-License-Identifier: Apache-2.0
#include "training/training.hpp"

#include <cstring>

#include "common/error.hpp"
#include "common/fs.hpp"
#include "common/random.hpp"
#include "eval/eval.hpp"
#include "numerics/ops.hpp"

namespace m2a::training {

using adapters::Granularity;
using adapters::Strategy;
using num::Tape;
using num::Tensor;
using num::Var;

void validate(const TrainConfig& c) {
    if (c.alpha < 0.0) throw InvalidArgument("alpha must be non-negative");
    if (c.lambda_c < 0.0 || c.kl_weight < 0.0) throw InvalidArgument("loss coefficients must be non-negative");
    if (!(c.optim.clip_norm > 0.0)) throw InvalidArgument("gradient clip must be positive");
    if (c.batch_size == 0) throw InvalidArgument("batch size must be positive");
    if (c.patience == 0) throw InvalidArgument("patience must be positive");
    if (!(c.mask_ratio > 0.0 && c.mask_ratio <= 1.0)) throw InvalidArgument("mask ratio must be in (0, 1]");
}

Batch make_batch(std::span<const data::Sample> samples, std::uint64_t seed) {
    Batch b;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        b.samples.push_back(&samples[i]);
        b.mask_seeds.push_back(Rng::mix(seed, i));
    }
    return b;
}

ViewOutput forward_view(const model::Model& model, Tape& tape, const Batch& batch, Strategy mode,
                        const TrainConfig& config) {
    if (batch.samples.empty()) throw InvalidArgument("empty batch");
    if (batch.mask_seeds.size() != batch.samples.size()) throw InvalidArgument("one mask seed per sample required");
    ViewOutput out;
    std::vector<Var> cls_rows, lm_parts;
    adapters::ContextOptions co;
    co.mask = config.mask;
    co.fallback_unknown_domains = true;
    for (std::size_t i = 0; i < batch.samples.size(); ++i) {
        const data::Sample& x = *batch.samples[i];
        Rng rng(Rng::mix(batch.mask_seeds[i], 0x72616eULL));
        const auto ctx = adapters::make_context(model.bank(), mode, x.domains, &rng, co);
        const auto deltas = model.deltas(ctx);
        model::RunOptions ro;
        ro.generate = true;
        ro.mask_ratio = config.mask_ratio;
        ro.bert_style_mask = config.bert_style_mask;
        ro.mask_seed = batch.mask_seeds[i];
        ro.train = true;
        ro.dropout_seed = Rng::mix(batch.mask_seeds[i], 0x64726fULL);
        auto r = model.run(tape, x.tokens, &deltas, ro);
        cls_rows.push_back(r.cls_logits);
        if (x.label) {
            out.labeled_rows.push_back(static_cast<int>(i));
            out.labels.push_back(*x.label);
        }
        if (r.lm_logits.valid()) {
            lm_parts.push_back(r.lm_logits);
            out.lm_targets.insert(out.lm_targets.end(), r.lm_targets.begin(), r.lm_targets.end());
        }
    }
    out.cls_logits = cls_rows.size() == 1 ? cls_rows.front() : num::concat_rows(cls_rows);
    if (!lm_parts.empty()) out.lm_logits = lm_parts.size() == 1 ? lm_parts.front() : num::concat_rows(lm_parts);
    return out;
}

MtlTerms mtl_loss(Tape& tape, const ViewOutput& view, double alpha) {
    MtlTerms t;
    t.cls = view.labeled_rows.empty()
                ? tape.constant(Tensor::scalar(0.0))
                : num::cross_entropy(num::gather_rows(view.cls_logits, view.labeled_rows), view.labels);
    t.gen = view.lm_targets.empty() ? tape.constant(Tensor::scalar(0.0))
                                    : num::cross_entropy(view.lm_logits, view.lm_targets);
    t.total = alpha == 0.0 ? t.cls : num::add(t.cls, num::scale(t.gen, alpha));
    return t;
}

MtlTerms mtl_loss(const model::Model& model, Tape& tape, const Batch& batch, Strategy mode,
                  const TrainConfig& config) {
    return mtl_loss(tape, forward_view(model, tape, batch, mode, config), config.alpha);
}

std::string to_string(Phase p) {
    switch (p) {
        case Phase::Joint: return "joint";
        case Phase::Separation: return "separation";
        default: return "single";
    }
}

nlohmann::json to_json(const LossBreakdown& b) {
    return {{"step", b.step},       {"phase", to_string(b.phase)}, {"loss", b.total},     {"nn_loss", b.nn_total},
            {"nn_cls", b.nn_cls},   {"nn_gen", b.nn_gen},          {"general_loss", b.gen_total},
            {"general_cls", b.gen_cls}, {"general_gen", b.gen_gen}, {"kl", b.kl},        {"grad_norm", b.grad_norm}};
}

JointTerms joint_loss(const model::Model& model, Tape& tape, const Batch& batch, const TrainConfig& config) {
    const ViewOutput nn = forward_view(model, tape, batch, Strategy::Fine, config);
    const ViewOutput gen = forward_view(model, tape, batch, Strategy::General, config);
    JointTerms t;
    t.nn = mtl_loss(tape, nn, config.alpha);
    t.general = mtl_loss(tape, gen, config.alpha);
    Var reference = config.stop_grad_teacher ? num::detach(nn.cls_logits) : nn.cls_logits;
    t.kl = num::kl_divergence(reference, gen.cls_logits);
    t.total = num::add(num::add(t.nn.total, num::scale(t.general.total, config.lambda_c)),
                       num::scale(t.kl, config.kl_weight));
    return t;
}

std::uint64_t checksum(std::span<const num::ParamPtr> params) {
    std::uint64_t h = 1469598103934665603ULL;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ULL;
        }
    };
    for (const auto& p : params) {
        feed(p->name.data(), p->name.size());
        for (double v : p->value.values()) {
            std::uint64_t bits;
            std::memcpy(&bits, &v, sizeof bits);
            unsigned char le[8];
            for (int i = 0; i < 8; ++i) le[i] = static_cast<unsigned char>(bits >> (8 * i));
            feed(le, 8);
        }
    }
    return h;
}

double dev_accuracy(const model::Model& model, const data::Dataset& dev, Strategy mode,
                    const adapters::ViewMask& mask, std::uint64_t seed) {
    eval::PredictOptions po;
    po.mode = mode;
    po.mask = mask;
    po.seed = seed;
    return eval::evaluate(model, dev, po).accuracy;
}

namespace {

std::vector<Tensor> snapshot(const std::vector<num::ParamPtr>& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p->value);
    return out;
}

void restore(const std::vector<num::ParamPtr>& params, const std::vector<Tensor>& values) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = values[i];
}

StopTrace early_stopping_loop(const model::Model& model, const TrainConfig& config, const data::Dataset& train,
                              const data::Dataset& dev, const data::Dataset* unlabeled, std::size_t max_epochs,
                              Strategy metric, const std::vector<num::ParamPtr>& watched, std::uint64_t seed,
                              const std::string& phase, std::vector<nlohmann::json>& log,
                              const std::function<LossBreakdown(const Batch&)>& step) {
    std::vector<const data::Sample*> pool;
    for (const auto& x : train.samples) pool.push_back(&x);
    if (unlabeled != nullptr && config.unlabeled_mix)
        for (const auto& x : unlabeled->samples) pool.push_back(&x);
    if (pool.empty()) throw DataError("no training samples");

    Rng rng(seed);
    StopTrace trace;
    auto record = [&](std::size_t epoch, double acc) {
        trace.dev_accuracy.push_back(acc);
        log.push_back({{"event", "eval"}, {"phase", phase}, {"epoch", epoch}, {"dev_accuracy", acc}});
    };
    record(0, dev_accuracy(model, dev, metric, config.mask));
    trace.best = trace.dev_accuracy.front();
    auto best_values = snapshot(watched);
    std::size_t bad = 0;
    for (std::size_t epoch = 1; epoch <= max_epochs; ++epoch) {
        rng.shuffle(pool);
        for (std::size_t i = 0; i < pool.size(); i += config.batch_size) {
            Batch b;
            for (std::size_t j = i; j < std::min(pool.size(), i + config.batch_size); ++j) {
                b.samples.push_back(pool[j]);
                b.mask_seeds.push_back(rng.next());
            }
            step(b);
            ++trace.steps;
        }
        const double acc = dev_accuracy(model, dev, metric, config.mask);
        record(epoch, acc);
        if (acc > trace.best) {
            trace.best = acc;
            trace.best_index = epoch;
            best_values = snapshot(watched);
            bad = 0;
        } else if (++bad >= config.patience) {
            trace.stopped_early = true;
            break;
        }
    }
    restore(watched, best_values);
    return trace;
}

}  // namespace

JointTrainer::JointTrainer(model::Model& model, TrainConfig config)
    : model_(model), config_(std::move(config)), optimizer_(model.all_parameters(), config_.optim) {
    validate(config_);
    model_.set_base_trainable(false);
    set_trainable_for(Phase::Joint);
}

std::vector<num::ParamPtr> JointTrainer::group(Granularity g) const { return model_.bank().parameters(g); }

std::vector<num::ParamPtr> JointTrainer::heads() const { return model_.head_parameters(); }

void JointTrainer::set_trainable_for(Phase p) {
    const bool joint = p != Phase::Separation;
    model_.set_heads_trainable(joint);
    for (auto& q : group(Granularity::Coarse)) q->trainable = joint;
    for (auto& q : group(Granularity::Fine)) q->trainable = joint;
    for (auto& q : group(Granularity::Align)) q->trainable = true;
}

LossBreakdown JointTrainer::apply(const JointTerms& t, Tape& tape, Phase p) {
    optimizer_.zero_grad();
    tape.backward(t.total);
    LossBreakdown b;
    b.phase = p;
    b.step = ++step_;
    b.total = t.total.value().item();
    b.nn_total = t.nn.total.value().item();
    b.nn_cls = t.nn.cls.value().item();
    b.nn_gen = t.nn.gen.value().item();
    b.gen_total = t.general.total.value().item();
    b.gen_cls = t.general.cls.value().item();
    b.gen_gen = t.general.gen.value().item();
    b.kl = t.kl.value().item();
    b.grad_norm = optimizer_.step();
    history_.push_back(b);
    log_.push_back(to_json(b));
    return b;
}

LossBreakdown JointTrainer::joint_step(const Batch& batch) {
    if (phase_ != Phase::Joint) throw StateError("joint_step called during the separation phase");
    Tape tape;
    const auto terms = joint_loss(model_, tape, batch, config_);
    return apply(terms, tape, Phase::Joint);
}

LossBreakdown JointTrainer::separation_step(const Batch& batch) {
    if (phase_ != Phase::Separation) throw StateError("separation_step called outside the separation phase");
    Tape tape;
    const auto terms = joint_loss(model_, tape, batch, config_);
    return apply(terms, tape, Phase::Separation);
}

StopTrace JointTrainer::run_joint(const data::Dataset& train, const data::Dataset& dev,
                                  const data::Dataset* unlabeled) {
    if (phase_ != Phase::Joint) throw StateError("joint training already finished");
    std::vector<num::ParamPtr> watched = model_.adapter_parameters();
    for (const auto& h : heads()) watched.push_back(h);
    auto trace = early_stopping_loop(model_, config_, train, dev, unlabeled, config_.max_epochs, Strategy::Fine,
                                     watched, Rng::mix(config_.seed, ++epoch_counter_), "joint", log_,
                                     [this](const Batch& b) { return joint_step(b); });
    converged_ = true;
    return trace;
}

void JointTrainer::enter_separation() {
    if (!converged_) throw StateError("module separation requires a converged NN");
    phase_ = Phase::Separation;
    set_trainable_for(Phase::Separation);
}

StopTrace JointTrainer::separation_phase(const data::Dataset& train, const data::Dataset& dev,
                                         const data::Dataset* unlabeled) {
    if (phase_ != Phase::Separation) enter_separation();
    auto trace = early_stopping_loop(model_, config_, train, dev, unlabeled, config_.separation_max_epochs,
                                     Strategy::General, group(Granularity::Align),
                                     Rng::mix(config_.seed, ++epoch_counter_), "separation", log_,
                                     [this](const Batch& b) { return separation_step(b); });
    return trace;
}

FitReport JointTrainer::fit(const data::Dataset& train, const data::Dataset& dev, const data::Dataset* unlabeled) {
    FitReport r;
    r.joint = run_joint(train, dev, unlabeled);
    r.general_dev_at_separation_start = dev_accuracy(model_, dev, Strategy::General, config_.mask);
    r.general_dev_after_separation = r.general_dev_at_separation_start;
    if (config_.separation) {
        r.separation = separation_phase(train, dev, unlabeled);
        r.general_dev_after_separation = dev_accuracy(model_, dev, Strategy::General, config_.mask);
    }
    r.steps = history_;
    return r;
}

void JointTrainer::write_log(const std::filesystem::path& path) const {
    std::string out;
    for (const auto& j : log_) out += j.dump() + "\n";
    write_file_atomic(path, out);
}

StopTrace train_single(model::Model& model, Strategy mode, const TrainConfig& config, const data::Dataset& train,
                       const data::Dataset& dev, const data::Dataset* unlabeled,
                       std::vector<LossBreakdown>* history) {
    validate(config);
    model.set_base_trainable(false);
    model.set_heads_trainable(true);
    std::vector<num::ParamPtr> watched = model.adapter_parameters();
    for (auto& p : watched) p->trainable = true;
    for (const auto& h : model.head_parameters()) watched.push_back(h);
    AdamW opt(model.all_parameters(), config.optim);
    std::vector<nlohmann::json> log;
    std::size_t step = 0;
    return early_stopping_loop(model, config, train, dev, unlabeled, config.max_epochs, mode, watched,
                               Rng::mix(config.seed, 1), "single", log, [&](const Batch& b) {
                                   opt.zero_grad();
                                   Tape tape;
                                   const auto t = mtl_loss(model, tape, b, mode, config);
                                   tape.backward(t.total);
                                   LossBreakdown lb;
                                   lb.phase = Phase::Single;
                                   lb.step = ++step;
                                   lb.total = lb.nn_total = t.total.value().item();
                                   lb.nn_cls = t.cls.value().item();
                                   lb.nn_gen = t.gen.value().item();
                                   lb.grad_norm = opt.step();
                                   if (history != nullptr) history->push_back(lb);
                                   return lb;
                               });
}

}  // namespace m2a::training
