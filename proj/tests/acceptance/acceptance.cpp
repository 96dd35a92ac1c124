// SPDX-License-Identifier: Apache-2.0
// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits nonzero when any fails. Pass criterion numbers to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "adapters/adapters.hpp"
#include "data/synthetic.hpp"
#include "eval/eval.hpp"
#include "model/model.hpp"
#include "numerics/ops.hpp"
#include "support/fixtures.hpp"
#include "support/gradcheck.hpp"
#include "training/training.hpp"

using namespace m2a;
using adapters::Granularity;
using adapters::Strategy;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

num::Tensor random_tensor(const num::Shape& shape, Rng& rng) {
    num::Tensor t = num::Tensor::zeros(shape);
    for (double& x : t.data()) x = rng.uniform(-1.0, 1.0);
    return t;
}

void randomize(const std::vector<num::ParamPtr>& params, std::uint64_t seed, double scale = 0.5) {
    Rng rng(seed);
    for (const auto& p : params)
        for (double& x : p->value.data()) x = rng.uniform(-scale, scale);
}

double max_abs_difference(const num::Tensor& a, const num::Tensor& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// ---------------------------------------------------------------------------

Outcome gradient_fidelity() {
    const auto splits = data::generate_synthetic(testing::tiny_synthetic(2));
    auto m = testing::tiny_model(splits.train.schema, 5);
    for (std::size_t s = 0; s < m->bank().site_count(); ++s)
        if (m->bank().site(s).fine)
            if (!std::holds_alternative<adapters::KronaModule>(*m->bank().find(s, {Granularity::Fine, 0, 0})))
                return {false, "fine modules are not KronA"};
    randomize(m->adapter_parameters(), 17);
    m->set_base_trainable(true);
    m->set_heads_trainable(true);
    training::TrainConfig tc;
    tc.mask_ratio = 0.4;
    const auto batch = training::make_batch(std::span(splits.train.samples).subspan(0, 3), 9);
    auto loss = [&](num::Tape& tape) { return training::joint_loss(*m, tape, batch, tc).total; };
    const auto params = m->all_parameters();
    std::size_t scalars = 0;
    for (const auto& p : params) scalars += p->trainable ? p->value.size() : 0;
    const auto r = testing::check_params(loss, params, 1e-5);
    return {r.max_error < 1e-4,
            fmt("%zu tensors, %zu scalars, max rel err %.2e at %s", params.size(), scalars, r.max_error, r.worst.c_str())};
}

Outcome zero_init_preservation() {
    const auto splits = data::generate_synthetic(testing::tiny_synthetic(3));
    auto m = testing::tiny_model(splits.train.schema, 6);
    randomize(m->base_parameters(), 21);
    randomize(m->head_parameters(), 22);
    Rng rng(4);
    const Strategy modes[] = {Strategy::Fine, Strategy::General, Strategy::Avg, Strategy::Rand, Strategy::CoarseOnly};
    double worst = 0;
    const auto& xs = splits.train.samples;
    for (int b = 0; b < 100; ++b) {
        std::vector<std::vector<int>> batch;
        std::vector<adapters::CompositionContext> ctxs;
        const std::size_t n = 1 + rng.below(6);
        for (std::size_t i = 0; i < n; ++i) {
            const auto& x = xs[rng.below(xs.size())];
            batch.push_back(x.tokens);
            ctxs.push_back(adapters::make_context(m->bank(), modes[rng.below(5)], x.domains, &rng));
        }
        worst = std::max(worst, max_abs_difference(m->classify(batch, &ctxs), m->classify(batch, nullptr)));
        const auto ids = m->input_ids(batch.front());
        const std::vector<int> pos{1, static_cast<int>(ids.size()) - 1};
        const auto ds = m->deltas(ctxs.front());
        worst = std::max(worst, max_abs_difference(m->mlm_logits(ids, pos, &ds), m->mlm_logits(ids, pos, nullptr)));
    }
    return {worst <= 1e-12, fmt("100 batches, max |delta| %.2e", worst)};
}

Outcome kron_equivalence() {
    Rng rng(31);
    double worst = 0;
    const int cases = 250;
    for (int t = 0; t < cases; ++t) {
        const std::size_t p = 1 + rng.below(6), q = 1 + rng.below(6), r = 1 + rng.below(6), s = 1 + rng.below(6);
        const auto c = random_tensor({p, q}, rng), d = random_tensor({r, s}, rng);
        const auto x = random_tensor({1 + rng.below(7), p * r}, rng);
        worst = std::max(worst, num::max_relative_difference(num::kron_apply(c, d, x), num::matmul(x, num::kron(c, d))));

        // The adapter module path on a random factorization of its dims.
        const std::size_t f = 1 + rng.below(4);
        const adapters::ModuleDims dims{f * (1 + rng.below(4)), f * (1 + rng.below(4)), 1};
        const auto mod = adapters::init_module(adapters::ModuleKind::Krona, {dims.d_in, dims.d_out, f},
                                               rng.below(1u << 30), 0.0, "k");
        randomize(adapters::parameters(mod), rng.below(1u << 30));
        const auto xm = random_tensor({1 + rng.below(4), dims.d_in}, rng);
        num::Tape tape;
        const auto y = adapters::apply(mod, tape.constant(xm)).value();
        worst = std::max(worst, num::max_relative_difference(y, num::matmul(xm, adapters::materialize(mod))));
    }
    return {worst <= 1e-10, fmt("%d cases, max rel diff %.2e", 2 * cases, worst)};
}

Outcome composition_correctness() {
    const auto splits = data::generate_synthetic(testing::tiny_synthetic(4));
    auto m = testing::tiny_model(splits.train.schema, 7);
    randomize(m->adapter_parameters(), 41);
    const auto& bank = m->bank();
    Rng rng(8);
    const Strategy modes[] = {Strategy::Fine, Strategy::General, Strategy::Avg, Strategy::Rand, Strategy::CoarseOnly};
    double worst = 0;
    int checked = 0;
    for (int t = 0; t < 60; ++t) {
        const auto& x = splits.train.samples[rng.below(splits.train.samples.size())];
        const auto ctx = adapters::make_context(bank, modes[t % 5], x.domains, &rng);
        for (std::size_t s = 0; s < bank.site_count(); ++s) {
            const auto& site = bank.site(s);
            num::Tensor sum = num::Tensor::zeros({site.d_in, site.d_out});
            double wsum = 0;
            for (const auto& slot : ctx.slots)
                if (const auto* mod = bank.find(s, slot.key)) {
                    sum = num::add(sum, num::scale(adapters::materialize(*mod), slot.weight));
                    wsum += slot.weight;
                }
            const adapters::ComposedDelta delta(bank, s, ctx);
            if (wsum == 0) continue;
            worst = std::max(worst, num::max_relative_difference(delta.materialize(), num::scale(sum, 1.0 / wsum)));
            ++checked;
        }
    }
    bool exact = true;
    eval::PredictOptions po;
    po.mode = Strategy::CoarseOnly;
    exact &= eval::predict_ensemble(*m, splits.test.samples, po) ==
             num::softmax_rows(eval::fused_logits(*m, splits.test.samples, po));
    po.mode = Strategy::Fine;
    po.mask.coarse = false;
    po.mask.fine = {true, false};
    exact &= eval::predict_ensemble(*m, splits.test.samples, po) ==
             num::softmax_rows(eval::fused_logits(*m, splits.test.samples, po));
    return {worst <= 1e-10 && exact,
            fmt("%d site deltas, max rel diff %.2e; single-module ensemble %s", checked, worst,
                exact ? "bit-identical" : "differs")};
}

Outcome efficiency_formulas() {
    Rng rng(55);
    int schemas = 0, mismatches = 0;
    for (int t = 0; t < 25; ++t) {
        adapters::ParamSchema s;
        const std::size_t attrs = 1 + rng.below(3);
        for (std::size_t a = 0; a < attrs; ++a) s.fine_domains.push_back(1 + rng.below(6));
        const std::size_t f = 1 + rng.below(4);
        s.d_in = f * (1 + rng.below(6));
        s.d_out = f * (1 + rng.below(6));
        s.rank = 1 + rng.below(std::min<std::size_t>(4, std::min(s.d_in, s.d_out)));
        s.krona_factor = f;
        for (bool dec : {false, true}) {
            s.decomposed = dec;
            mismatches += adapters::param_count(s) != adapters::bank_for_schema(s, rng.below(1000)).scalar_count();
            ++schemas;
        }
    }
    adapters::ParamSchema w{{4, 3}, 32, 32, 8, false, 0};
    const auto plain = adapters::param_count(w), plain_alloc = adapters::bank_for_schema(w).scalar_count();
    w.decomposed = true;
    const auto dec = adapters::param_count(w), dec_alloc = adapters::bank_for_schema(w).scalar_count();
    const bool ok = mismatches == 0 && plain == 5632 && plain_alloc == 5632 && dec == 1312 && dec_alloc == 1312;
    return {ok, fmt("%d schema/scheme pairs, %d mismatches; worked example %llu/%llu (allocated %llu/%llu)", schemas,
                    mismatches, static_cast<unsigned long long>(plain), static_cast<unsigned long long>(dec),
                    static_cast<unsigned long long>(plain_alloc), static_cast<unsigned long long>(dec_alloc))};
}

Outcome masking_statistics() {
    Rng rng(66);
    std::size_t eligible = 0, masked = 0;
    std::uint64_t seed = 0;
    while (eligible < 100000) {
        const std::size_t n = 1 + rng.below(40);
        std::vector<int> toks(n);
        for (int& t : toks) t = data::kFirstWordId + static_cast<int>(rng.below(50));
        data::MaskOptions o;
        o.protected_prefix = rng.bernoulli(0.5) ? 1 : 0;
        if (o.protected_prefix >= n) continue;
        const auto r = data::mask_tokens(toks, 0.15, ++seed, o);
        eligible += n - o.protected_prefix;
        masked += r.positions.size();
    }
    const double rate = static_cast<double>(masked) / static_cast<double>(eligible);
    return {std::abs(rate - 0.15) <= 0.01, fmt("%zu tokens, rate %.4f", eligible, rate)};
}

// ---------------------------------------------------------------------------
// Synthetic experiments shared by the directional criteria.

struct SeedResult {
    double fine = 0, general = 0, avg = 0, rand = 0, coarse_view = 0;
    double fine_no_gen = 0;
    double coarse_only = 0;
    bool frozen_intact = false, align_changed = false;
    double sep_start = 0, sep_end = 0;
    std::vector<training::LossBreakdown> history;
    double kl_weight = 0, lambda_c = 0, alpha = 0;
};

struct Experiment {
    std::vector<SeedResult> seeds;
    double seconds = 0;
};

data::SyntheticConfig experiment_data(std::uint64_t seed) {
    data::SyntheticConfig sc;
    sc.attributes = {{"user", 8}, {"item", 8}};
    sc.label_bias = 0.7;
    sc.samples_per_domain = 100;
    sc.unlabeled_per_domain = 200;
    sc.seq_len = 12;
    sc.sentiment_rate = 0.15;
    sc.test_fraction = 0.5;
    sc.seed = seed;
    return sc;
}

model::BackboneConfig experiment_backbone(const data::Schema& schema, std::uint64_t seed) {
    model::BackboneConfig b;
    b.num_layers = 1;
    b.d_model = 32;
    b.num_heads = 2;
    b.d_ff = 64;
    b.vocab_size = schema.vocab_size;
    b.num_classes = schema.num_classes;
    b.max_seq_len = 13;
    b.seed = seed;
    return b;
}

training::TrainConfig experiment_training(std::uint64_t seed, double alpha) {
    training::TrainConfig tc;
    tc.alpha = alpha;
    tc.seed = seed;
    tc.max_epochs = 30;
    tc.optim.learning_rate = 3e-3;
    tc.unlabeled_mix = true;
    return tc;
}

SeedResult run_seed(std::uint64_t seed) {
    SeedResult out;
    const auto sc = experiment_data(seed);
    const auto splits = data::generate_synthetic(sc);
    data::SyntheticConfig pc = sc;
    pc.seed = Rng::mix(seed, 7);
    pc.samples_per_domain = 100;
    pc.unlabeled_per_domain = 0;
    const auto corpus = data::generate_synthetic(pc).train;

    const auto bc = experiment_backbone(splits.train.schema, seed);
    auto fresh = [&] { return model::Model(bc, model::bank_config_for(splits.train.schema, 4, Rng::mix(seed, 4))); };
    model::Model base = fresh();
    model::PretrainConfig pre;
    pre.steps = 600;
    pre.learning_rate = 3e-3;
    pre.seed = seed;
    model::pretrain_base(base, corpus, pre);
    auto from_base = [&] {
        model::Model m = fresh();
        for (const auto& p : base.base_parameters()) m.find(p->name)->value = p->value;
        for (const auto& p : base.head_parameters()) m.find(p->name)->value = p->value;
        return m;
    };
    auto acc = [&](const model::Model& m, Strategy s) {
        eval::PredictOptions po;
        po.mode = s;
        po.seed = seed;
        return eval::evaluate(m, splits.test, po).accuracy;
    };

    {
        model::Model m = from_base();
        const auto tc = experiment_training(seed, 0.5);
        training::JointTrainer jt(m, tc);
        jt.run_joint(splits.train, splits.dev, &splits.unlabeled);
        jt.enter_separation();
        std::vector<num::ParamPtr> frozen = jt.group(Granularity::Coarse);
        for (const auto& p : jt.group(Granularity::Fine)) frozen.push_back(p);
        for (const auto& p : jt.heads()) frozen.push_back(p);
        const auto align = jt.group(Granularity::Align);
        const auto frozen_before = training::checksum(frozen), align_before = training::checksum(align);
        out.sep_start = training::dev_accuracy(m, splits.dev, Strategy::General, {});
        jt.separation_phase(splits.train, splits.dev, &splits.unlabeled);
        out.sep_end = training::dev_accuracy(m, splits.dev, Strategy::General, {});
        out.frozen_intact = training::checksum(frozen) == frozen_before;
        out.align_changed = training::checksum(align) != align_before;
        out.history = jt.history();
        out.alpha = tc.alpha;
        out.lambda_c = tc.lambda_c;
        out.kl_weight = tc.kl_weight;

        out.fine = acc(m, Strategy::Fine);
        out.general = acc(m, Strategy::General);
        out.avg = acc(m, Strategy::Avg);
        out.rand = acc(m, Strategy::Rand);
        out.coarse_view = acc(m, Strategy::CoarseOnly);
    }
    {
        model::Model m = from_base();
        training::JointTrainer jt(m, experiment_training(seed, 0.0));
        jt.fit(splits.train, splits.dev, &splits.unlabeled);
        out.fine_no_gen = acc(m, Strategy::Fine);
    }
    {
        model::Model m = from_base();
        training::train_single(m, Strategy::CoarseOnly, experiment_training(seed, 0.5), splits.train, splits.dev,
                               &splits.unlabeled);
        out.coarse_only = acc(m, Strategy::CoarseOnly);
    }
    return out;
}

const Experiment& experiment() {
    static const Experiment e = [] {
        Experiment x;
        const auto t0 = std::chrono::steady_clock::now();
        for (std::uint64_t s = 1; s <= 5; ++s) {
            x.seeds.push_back(run_seed(s));
            const auto& r = x.seeds.back();
            std::printf("  seed %llu: fine %.3f general %.3f avg %.3f rand %.3f coarse-view %.3f | alpha0 fine %.3f | "
                        "coarse-only %.3f | sep %.3f->%.3f\n",
                        static_cast<unsigned long long>(s), r.fine, r.general, r.avg, r.rand, r.coarse_view,
                        r.fine_no_gen, r.coarse_only, r.sep_start, r.sep_end);
            std::fflush(stdout);
        }
        x.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return x;
    }();
    return e;
}

double mean_of(const std::function<double(const SeedResult&)>& f) {
    const auto& s = experiment().seeds;
    double t = 0;
    for (const auto& r : s) t += f(r);
    return t / static_cast<double>(s.size());
}

Outcome non_iid_benefit() {
    const double fine = mean_of([](auto& r) { return r.fine; });
    const double coarse = mean_of([](auto& r) { return r.coarse_only; });
    const double no_gen = mean_of([](auto& r) { return r.fine_no_gen; });
    const double secs = experiment().seconds;
    return {fine > coarse && no_gen < fine && secs < 600,
            fmt("Acc fine %.4f vs coarse-only %.4f; alpha=0 %.4f vs alpha=0.5 %.4f; %.0f s", fine, coarse, no_gen,
                fine, secs)};
}

Outcome strategy_ordering() {
    const double general = mean_of([](auto& r) { return r.general; });
    const double rand = mean_of([](auto& r) { return r.rand; });
    const double avg = mean_of([](auto& r) { return r.avg; });
    return {general >= rand && std::abs(avg - general) <= 0.02,
            fmt("Acc general %.4f, rand %.4f, avg %.4f (gap %.2f points)", general, rand, avg,
                100 * std::abs(avg - general))};
}

Outcome separation_contract() {
    int ok = 0;
    std::string seeds;
    for (const auto& r : experiment().seeds) {
        const bool good = r.frozen_intact && r.align_changed && r.sep_end >= r.sep_start;
        ok += good;
        seeds += fmt(" [%s%s %.3f->%.3f]", r.frozen_intact ? "" : "frozen-changed ",
                     r.align_changed ? "cp-changed" : "cp-unchanged", r.sep_start, r.sep_end);
    }
    return {ok == 5, fmt("%d/5 seeds:", ok) + seeds};
}

Outcome loss_accounting() {
    // Totals against their terms over every logged training step.
    double worst = 0, min_kl = 0;
    std::size_t steps = 0;
    for (const auto& r : experiment().seeds)
        for (const auto& b : r.history) {
            const double nn = b.nn_cls + r.alpha * b.nn_gen, gen = b.gen_cls + r.alpha * b.gen_gen;
            double total = b.nn_total + r.lambda_c * b.gen_total;
            if (b.phase == training::Phase::Joint || b.phase == training::Phase::Separation) total += r.kl_weight * b.kl;
            worst = std::max({worst, std::abs(b.nn_total - nn), std::abs(b.gen_total - gen), std::abs(b.total - total)});
            min_kl = std::min(min_kl, b.kl);
            ++steps;
        }

    // Recomputed from plain tensors on a fixed batch.
    const auto splits = data::generate_synthetic(testing::tiny_synthetic(9));
    auto m = testing::tiny_model(splits.train.schema, 9);
    randomize(m->adapter_parameters(), 91);
    training::TrainConfig tc;
    tc.alpha = 0.3;
    tc.lambda_c = 0.7;
    tc.kl_weight = 1.5;
    const auto batch = training::make_batch(std::span(splits.train.samples).subspan(0, 4), 12);
    num::Tape tape;
    const auto terms = training::joint_loss(*m, tape, batch, tc);
    const auto nn = training::forward_view(*m, tape, batch, Strategy::Fine, tc);
    const auto gv = training::forward_view(*m, tape, batch, Strategy::General, tc);
    auto ce = [](const num::Tensor& logits, const std::vector<int>& rows, const std::vector<int>& y) {
        if (y.empty()) return 0.0;
        const auto lp = num::log_softmax_rows(logits);
        double s = 0;
        for (std::size_t i = 0; i < y.size(); ++i)
            s -= lp.at(rows.empty() ? i : static_cast<std::size_t>(rows[i]), static_cast<std::size_t>(y[i]));
        return s / static_cast<double>(y.size());
    };
    auto mtl = [&](const training::ViewOutput& v) {
        const double gen = v.lm_targets.empty() ? 0.0 : ce(v.lm_logits.value(), {}, v.lm_targets);
        return ce(v.cls_logits.value(), v.labeled_rows, v.labels) + tc.alpha * gen;
    };
    const auto p = num::softmax_rows(nn.cls_logits.value()), lp = num::log_softmax_rows(nn.cls_logits.value()),
               lq = num::log_softmax_rows(gv.cls_logits.value());
    double kl = 0;
    for (std::size_t i = 0; i < p.size(); ++i) kl += p[i] * (lp[i] - lq[i]);
    kl /= static_cast<double>(p.rows());
    const double recomputed = mtl(nn) + tc.lambda_c * mtl(gv) + tc.kl_weight * kl;
    const double direct = std::abs(terms.total.value().item() - recomputed);

    Rng rng(13);
    double self_kl = 0;
    for (int t = 0; t < 50; ++t) {
        const auto z = random_tensor({1 + rng.below(5), 2 + rng.below(6)}, rng);
        num::Tape kt;
        self_kl = std::max(self_kl, std::abs(num::kl_divergence(kt.constant(z), kt.constant(z)).value().item()));
    }
    return {worst <= 1e-10 && direct <= 1e-10 && self_kl == 0.0 && min_kl >= 0.0,
            fmt("%zu logged steps max term gap %.2e; recomputed batch gap %.2e; max KL(p,p) %.1e; min KL %.2e", steps,
                worst, direct, self_kl, min_kl)};
}

Outcome metric_oracles() {
    Rng rng(77);
    std::vector<int> gold(1000), pred(1000);
    for (std::size_t i = 0; i < gold.size(); ++i) {
        gold[i] = static_cast<int>(rng.below(5));
        pred[i] = rng.bernoulli(0.5) ? gold[i] : static_cast<int>(rng.below(5));
    }
    std::set<int> seen(gold.begin(), gold.end());
    seen.insert(pred.begin(), pred.end());
    const std::vector<int> classes(seen.begin(), seen.end());
    const std::size_t k = classes.size();
    std::vector<std::vector<double>> cm(k, std::vector<double>(k, 0.0));
    auto idx = [&](int c) { return static_cast<std::size_t>(std::ranges::find(classes, c) - classes.begin()); };
    double sq = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        cm[idx(gold[i])][idx(pred[i])] += 1;
        sq += static_cast<double>((gold[i] - pred[i]) * (gold[i] - pred[i]));
    }
    double diag = 0, f1 = 0;
    for (std::size_t c = 0; c < k; ++c) {
        diag += cm[c][c];
        double row = 0, col = 0;
        for (std::size_t j = 0; j < k; ++j) {
            row += cm[c][j];
            col += cm[j][c];
        }
        const double prec = col > 0 ? cm[c][c] / col : 0, rec = row > 0 ? cm[c][c] / row : 0;
        f1 += prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0;
    }
    const double n = static_cast<double>(gold.size());
    const auto r = eval::metrics(gold, pred);
    const double acc = diag / n, rmse = std::sqrt(sq / n);
    f1 /= static_cast<double>(k);
    const bool ok = r.accuracy == acc && std::abs(r.rmse - rmse) <= 1e-12 && std::abs(r.macro_f1 - f1) <= 1e-12;
    return {ok, fmt("acc %.4f (oracle %.4f), rmse gap %.1e, macro-F1 gap %.1e", r.accuracy, acc,
                    std::abs(r.rmse - rmse), std::abs(r.macro_f1 - f1))};
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
        {"gradient fidelity", gradient_fidelity},
        {"zero-init preservation", zero_init_preservation},
        {"kronecker path equivalence", kron_equivalence},
        {"composition correctness", composition_correctness},
        {"parameter budget formulas", efficiency_formulas},
        {"masking statistics", masking_statistics},
        {"synthetic non-iid benefit", non_iid_benefit},
        {"connection strategy ordering", strategy_ordering},
        {"module separation contract", separation_contract},
        {"loss accounting", loss_accounting},
        {"metric oracles", metric_oracles},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("[%s] %2d %s: %s (%.1f s)\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first, o.detail.c_str(),
                    secs);
        std::fflush(stdout);
        failed += !o.pass;
    }
    return failed == 0 ? 0 : 1;
}
