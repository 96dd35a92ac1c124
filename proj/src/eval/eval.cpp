// SPDX-License-Identifier: Apache-2.0
#include "eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "common/error.hpp"
#include "common/random.hpp"
#include "numerics/ops.hpp"

namespace m2a::eval {

using adapters::CompositionContext;
using num::Tensor;

CompositionContext sample_context(const model::Model& model, const data::Sample& sample, std::size_t index,
                                  const PredictOptions& options) {
    adapters::ContextOptions co;
    co.mask = options.mask;
    co.fallback_unknown_domains = options.fallback_unknown_domains;
    Rng rng(Rng::mix(options.seed, index));
    return adapters::make_context(model.bank(), options.mode, sample.domains, &rng, co);
}

Tensor fused_logits(const model::Model& model, const std::vector<data::Sample>& samples,
                    const PredictOptions& options, int* fallbacks) {
    if (samples.empty()) throw InvalidArgument("nothing to predict");
    std::vector<std::vector<int>> batch;
    std::vector<CompositionContext> contexts;
    int fb = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        batch.push_back(samples[i].tokens);
        contexts.push_back(sample_context(model, samples[i], i, options));
        fb += contexts.back().fallbacks;
    }
    if (fallbacks != nullptr) *fallbacks = fb;
    return model.classify(batch, &contexts);
}

namespace {

std::vector<int> argmax_rows(const Tensor& t) {
    std::vector<int> out;
    for (std::size_t r = 0; r < t.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < t.cols(); ++c)
            if (t.at(r, c) > t.at(r, best)) best = c;
        out.push_back(static_cast<int>(best));
    }
    return out;
}

}  // namespace

Predictions predict_fused(const model::Model& model, const std::vector<data::Sample>& samples,
                          const PredictOptions& options) {
    Predictions p;
    p.labels = argmax_rows(fused_logits(model, samples, options, &p.fallbacks));
    return p;
}

Tensor predict_ensemble(const model::Model& model, const std::vector<data::Sample>& samples,
                        const PredictOptions& options) {
    if (samples.empty()) throw InvalidArgument("nothing to predict");
    const std::size_t k = model.config().num_classes;
    const auto& bank = model.bank();
    Tensor out = Tensor::zeros({samples.size(), k});
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto ctx = sample_context(model, samples[i], i, options);
        // Group slots by the modules they resolve to across sites.
        std::map<std::vector<const adapters::AdapterModule*>, std::pair<adapters::Slot, double>> views;
        for (const auto& slot : ctx.slots) {
            std::vector<const adapters::AdapterModule*> sig;
            for (std::size_t s = 0; s < bank.site_count(); ++s) sig.push_back(bank.find(s, slot.key));
            auto [it, fresh] = views.try_emplace(sig, slot, 0.0);
            it->second.second += slot.weight;
        }
        const auto tokens = std::vector<std::vector<int>>{samples[i].tokens};
        for (const auto& [sig, entry] : views) {
            CompositionContext single;
            single.mode = ctx.mode;
            single.slots = {adapters::Slot{entry.first.key, 1.0}};
            const std::vector<CompositionContext> cs{single};
            const Tensor probs = num::softmax_rows(model.classify(tokens, &cs));
            const double w = views.size() == 1 ? 1.0 : entry.second;
            for (std::size_t c = 0; c < k; ++c) out.at(i, c) += w * probs.at(0, c);
        }
    }
    return out;
}

EvalReport metrics(const std::vector<int>& gold, const std::vector<int>& predicted) {
    if (gold.empty()) throw InvalidArgument("metrics need at least one sample");
    if (gold.size() != predicted.size()) {
        throw InvalidArgument("gold and predicted lengths differ (" + std::to_string(gold.size()) + " vs " +
                              std::to_string(predicted.size()) + ")");
    }
    EvalReport r;
    r.count = gold.size();
    std::size_t correct = 0;
    double sq = 0.0;
    std::map<int, std::size_t> tp, fp, fn;
    std::set<int> classes;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        const int g = gold[i], p = predicted[i];
        classes.insert(g);
        classes.insert(p);
        if (g == p) {
            ++correct;
            ++tp[g];
        } else {
            ++fp[p];
            ++fn[g];
        }
        const double d = static_cast<double>(g - p);
        sq += d * d;
    }
    const double n = static_cast<double>(gold.size());
    r.accuracy = static_cast<double>(correct) / n;
    r.rmse = std::sqrt(sq / n);
    double f1_sum = 0.0;
    for (int c : classes) {
        const double t = static_cast<double>(tp[c]);
        const double denom = 2.0 * t + static_cast<double>(fp[c]) + static_cast<double>(fn[c]);
        f1_sum += denom > 0.0 ? 2.0 * t / denom : 0.0;
    }
    r.macro_f1 = f1_sum / static_cast<double>(classes.size());
    return r;
}

EvalReport evaluate(const model::Model& model, const data::Dataset& dataset, const PredictOptions& options) {
    std::vector<data::Sample> labeled;
    for (const auto& x : dataset.samples)
        if (x.label) labeled.push_back(x);
    if (labeled.empty()) throw DataError("no labeled samples to evaluate");
    const Predictions pred = predict_fused(model, labeled, options);
    std::vector<int> gold;
    for (const auto& x : labeled) gold.push_back(*x.label);
    EvalReport r = metrics(gold, pred.labels);
    r.strategy = adapters::to_string(options.mode);
    r.seed = options.seed;
    r.fallbacks = pred.fallbacks;
    for (const auto& a : dataset.schema.attributes) {
        r.attribute_names.push_back(a.name);
        r.per_domain.emplace_back(a.num_domains);
    }
    for (std::size_t i = 0; i < labeled.size(); ++i) {
        for (std::size_t a = 0; a < r.per_domain.size(); ++a) {
            const auto d = static_cast<std::size_t>(labeled[i].domains[a]);
            auto& table = r.per_domain[a];
            if (d >= table.size()) table.resize(d + 1);
            ++table[d].total;
            if (gold[i] == pred.labels[i]) ++table[d].correct;
        }
    }
    return r;
}

nlohmann::json to_json(const EvalReport& r) {
    nlohmann::json per = nlohmann::json::object();
    for (std::size_t a = 0; a < r.per_domain.size(); ++a) {
        nlohmann::json rows = nlohmann::json::array();
        for (const auto& d : r.per_domain[a]) {
            const double acc = d.total ? static_cast<double>(d.correct) / static_cast<double>(d.total) : 0.0;
            rows.push_back({{"correct", d.correct}, {"total", d.total}, {"accuracy", acc}});
        }
        const std::string name = a < r.attribute_names.size() ? r.attribute_names[a] : std::to_string(a);
        per[name] = rows;
    }
    return {{"strategy", r.strategy}, {"seed", r.seed},         {"count", r.count},
            {"accuracy", r.accuracy}, {"rmse", r.rmse},         {"macro_f1", r.macro_f1},
            {"fallbacks", r.fallbacks}, {"per_domain", per}};
}

std::string to_table(const EvalReport& r) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << "strategy  " << r.strategy << "\n";
    os << "samples   " << r.count << "\n";
    os << "accuracy  " << r.accuracy << "\n";
    os << "rmse      " << r.rmse << "\n";
    os << "macro_f1  " << r.macro_f1 << "\n";
    if (r.fallbacks > 0) os << "fallbacks " << r.fallbacks << "\n";
    for (std::size_t a = 0; a < r.per_domain.size(); ++a) {
        os << "\n" << (a < r.attribute_names.size() ? r.attribute_names[a] : std::to_string(a)) << "\n";
        os << "  domain  total  accuracy\n";
        for (std::size_t d = 0; d < r.per_domain[a].size(); ++d) {
            const auto& e = r.per_domain[a][d];
            const double acc = e.total ? static_cast<double>(e.correct) / static_cast<double>(e.total) : 0.0;
            os << "  " << std::setw(6) << d << "  " << std::setw(5) << e.total << "  " << acc << "\n";
        }
    }
    return os.str();
}

}  // namespace m2a::eval
