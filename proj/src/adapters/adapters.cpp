// SPDX-License-Identifier: Apache-2.0
#include "adapters/adapters.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "common/error.hpp"
#include "numerics/ops.hpp"

namespace m2a::adapters {

using num::ParamPtr;
using num::Tensor;

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

Tensor uniform_tensor(num::Shape shape, double bound, Rng& rng) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    return t;
}

ParamPtr make_param(std::string name, Tensor value) {
    return std::make_shared<num::Parameter>(std::move(name), std::move(value));
}

LoraModule make_lora(const std::string& prefix, std::size_t d_in, std::size_t d_out, std::size_t rank, double bound,
                     Rng& rng) {
    if (rank == 0 || rank > std::min(d_in, d_out)) {
        throw InvalidArgument("LoRA rank " + std::to_string(rank) + " must be in [1, min(" + std::to_string(d_in) +
                              ", " + std::to_string(d_out) + ")]");
    }
    LoraModule m;
    m.rank = rank;
    m.a = make_param(prefix + "/A", uniform_tensor({d_in, rank}, bound, rng));
    m.b = make_param(prefix + "/B", Tensor::zeros({rank, d_out}));
    return m;
}

ParamPtr make_krona_c(const std::string& name, std::size_t d_in, std::size_t factor, double bound, Rng& rng) {
    return make_param(name, uniform_tensor({d_in / factor, factor}, bound, rng));
}

KronaModule make_krona(ParamPtr c, const std::string& d_name, std::size_t d_out, std::size_t factor) {
    KronaModule m;
    m.factor = factor;
    m.c = std::move(c);
    m.d = make_param(d_name, Tensor::zeros({factor, d_out / factor}));
    return m;
}

double resolve_bound(double bound, std::size_t d_in) { return bound > 0.0 ? bound : default_init_bound(d_in); }

bool same_module(const AdapterModule& x, const AdapterModule& y) {
    const auto px = parameters(x);
    const auto py = parameters(y);
    return px == py;
}

}  // namespace

std::size_t input_dim(const AdapterModule& m) {
    return std::visit(overloaded{[](const LoraModule& l) { return l.a->value.rows(); },
                                 [](const KronaModule& k) { return k.c->value.rows() * k.d->value.rows(); }},
                      m);
}

std::size_t output_dim(const AdapterModule& m) {
    return std::visit(overloaded{[](const LoraModule& l) { return l.b->value.cols(); },
                                 [](const KronaModule& k) { return k.c->value.cols() * k.d->value.cols(); }},
                      m);
}

std::vector<ParamPtr> parameters(const AdapterModule& m) {
    return std::visit(overloaded{[](const LoraModule& l) { return std::vector<ParamPtr>{l.a, l.b}; },
                                 [](const KronaModule& k) { return std::vector<ParamPtr>{k.c, k.d}; }},
                      m);
}

Tensor materialize(const AdapterModule& m) {
    return std::visit(overloaded{[](const LoraModule& l) { return num::matmul(l.a->value, l.b->value); },
                                 [](const KronaModule& k) { return num::kron(k.c->value, k.d->value); }},
                      m);
}

num::Var apply(const AdapterModule& m, num::Var x) {
    num::Tape& tape = *x.tape;
    return std::visit(overloaded{[&](const LoraModule& l) {
                                     return num::matmul(num::matmul(x, tape.param(*l.a)), tape.param(*l.b));
                                 },
                                 [&](const KronaModule& k) {
                                     return num::kron_apply(tape.param(*k.c), tape.param(*k.d), x);
                                 }},
                      m);
}

double default_init_bound(std::size_t d_in) { return std::sqrt(6.0 / static_cast<double>(d_in)); }

std::size_t default_krona_factor(std::size_t d_in, std::size_t d_out) {
    const std::size_t g = std::gcd(d_in, d_out);
    const double target = std::sqrt(static_cast<double>(d_in));
    std::size_t best = 1;
    for (std::size_t f = 1; f <= g; ++f) {
        if (g % f != 0) continue;
        if (std::abs(static_cast<double>(f) - target) < std::abs(static_cast<double>(best) - target)) best = f;
    }
    return best;
}

void check_krona_factor(std::size_t d_in, std::size_t d_out, std::size_t factor) {
    if (factor == 0 || factor > std::min(d_in, d_out) || d_in % factor != 0 || d_out % factor != 0) {
        throw FactorizationError("KronA factor " + std::to_string(factor) + " must divide d_in=" +
                                 std::to_string(d_in) + " and d_out=" + std::to_string(d_out));
    }
}

AdapterModule init_module(ModuleKind kind, const ModuleDims& dims, std::uint64_t seed, double bound,
                          const std::string& name) {
    if (dims.d_in == 0 || dims.d_out == 0) throw InvalidArgument("module dimensions must be positive");
    Rng rng(seed);
    const double b = resolve_bound(bound, dims.d_in);
    if (kind == ModuleKind::Lora) return make_lora(name, dims.d_in, dims.d_out, dims.rank, b, rng);
    const std::size_t factor = dims.rank == 0 ? default_krona_factor(dims.d_in, dims.d_out) : dims.rank;
    check_krona_factor(dims.d_in, dims.d_out, factor);
    return make_krona(make_krona_c(name + "/C", dims.d_in, factor, b, rng), name + "/D", dims.d_out, factor);
}

std::string to_string(Granularity g) {
    switch (g) {
        case Granularity::Coarse: return "c";
        case Granularity::Align: return "cp";
        case Granularity::Fine: return "f";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// AdapterBank

AdapterBank::AdapterBank(BankConfig config, std::vector<SiteSpec> sites) : config_(std::move(config)) {
    if (config_.attributes.empty()) throw InvalidArgument("adapter bank needs at least one attribute");
    Rng rng(config_.seed);
    const auto n_attr = config_.attributes.size();
    for (auto& spec : sites) {
        if (spec.d_in == 0 || spec.d_out == 0) throw InvalidArgument("site " + spec.name + " has a zero dimension");
        SiteModules s;
        s.spec = spec;
        const double bound = resolve_bound(config_.init_bound, spec.d_in);
        const std::size_t coarse_copies = config_.share_coarse_across_attributes ? 1 : n_attr;
        auto attr_label = [&](std::size_t a) {
            return config_.share_coarse_across_attributes ? std::string("all") : config_.attributes[a].name;
        };
        if (spec.coarse) {
            for (std::size_t a = 0; a < coarse_copies; ++a)
                s.coarse.emplace_back(make_lora(spec.name + "/" + attr_label(a) + "/c", spec.d_in, spec.d_out,
                                                config_.lora_rank, bound, rng));
            for (std::size_t a = 0; a < coarse_copies; ++a)
                s.align.emplace_back(make_lora(spec.name + "/" + attr_label(a) + "/cp", spec.d_in, spec.d_out,
                                               config_.lora_rank, bound, rng));
        }
        if (spec.fine) {
            s.fine.resize(n_attr);
            for (std::size_t a = 0; a < n_attr; ++a) {
                const auto& attr = config_.attributes[a];
                const std::string prefix = spec.name + "/" + attr.name + "/f";
                if (config_.fine_kind == ModuleKind::Lora) {
                    for (std::size_t d = 0; d < attr.num_domains; ++d)
                        s.fine[a].emplace_back(
                            make_lora(prefix + std::to_string(d), spec.d_in, spec.d_out, config_.lora_rank, bound, rng));
                    continue;
                }
                const std::size_t factor = config_.krona_factor == 0
                                               ? default_krona_factor(spec.d_in, spec.d_out)
                                               : config_.krona_factor;
                check_krona_factor(spec.d_in, spec.d_out, factor);
                ParamPtr shared_c;
                if (config_.share_c_per_attribute) shared_c = make_krona_c(prefix + "/C", spec.d_in, factor, bound, rng);
                for (std::size_t d = 0; d < attr.num_domains; ++d) {
                    const std::string name = prefix + std::to_string(d);
                    ParamPtr c = shared_c ? shared_c : make_krona_c(name + "/C", spec.d_in, factor, bound, rng);
                    s.fine[a].emplace_back(make_krona(std::move(c), name + "/D", spec.d_out, factor));
                }
            }
        }
        sites_.push_back(std::move(s));
    }
}

std::optional<std::size_t> AdapterBank::site_index(const std::string& name) const {
    for (std::size_t i = 0; i < sites_.size(); ++i)
        if (sites_[i].spec.name == name) return i;
    return std::nullopt;
}

void AdapterBank::check_key(const ModuleKey& key) const {
    if (key.attribute < 0 || static_cast<std::size_t>(key.attribute) >= config_.attributes.size()) {
        throw InvalidArgument("unknown attribute index " + std::to_string(key.attribute));
    }
    if (key.granularity == Granularity::Fine) {
        const auto n = config_.attributes[static_cast<std::size_t>(key.attribute)].num_domains;
        if (key.domain < 0 || static_cast<std::size_t>(key.domain) >= n) {
            throw DataError("unknown domain id " + std::to_string(key.domain) + " for attribute '" +
                            config_.attributes[static_cast<std::size_t>(key.attribute)].name + "'");
        }
    }
}

const AdapterModule* AdapterBank::find(std::size_t site, const ModuleKey& key) const {
    check_key(key);
    const SiteModules& s = sites_.at(site);
    const auto a = static_cast<std::size_t>(key.attribute);
    switch (key.granularity) {
        case Granularity::Coarse:
            if (s.coarse.empty()) return nullptr;
            return &s.coarse[s.coarse.size() == 1 ? 0 : a];
        case Granularity::Align:
            if (s.align.empty()) return nullptr;
            return &s.align[s.align.size() == 1 ? 0 : a];
        case Granularity::Fine:
            if (s.fine.empty()) return nullptr;
            return &s.fine[a][static_cast<std::size_t>(key.domain)];
    }
    return nullptr;
}

std::vector<ParamPtr> AdapterBank::parameters() const {
    std::vector<ParamPtr> out;
    for (auto g : {Granularity::Coarse, Granularity::Align, Granularity::Fine}) {
        auto part = parameters(g);
        out.insert(out.end(), part.begin(), part.end());
    }
    return out;
}

std::vector<ParamPtr> AdapterBank::parameters(Granularity g) const {
    std::vector<ParamPtr> out;
    std::unordered_set<const num::Parameter*> seen;
    auto take = [&](const AdapterModule& m) {
        for (auto& p : adapters::parameters(m))
            if (seen.insert(p.get()).second) out.push_back(p);
    };
    for (const auto& s : sites_) {
        if (g == Granularity::Coarse)
            for (const auto& m : s.coarse) take(m);
        if (g == Granularity::Align)
            for (const auto& m : s.align) take(m);
        if (g == Granularity::Fine)
            for (const auto& attr : s.fine)
                for (const auto& m : attr) take(m);
    }
    return out;
}

std::size_t AdapterBank::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p->value.size();
    return n;
}

// ---------------------------------------------------------------------------
// Composition

std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Fine: return "fine";
        case Strategy::General: return "general";
        case Strategy::Avg: return "avg";
        case Strategy::Rand: return "rand";
        case Strategy::CoarseOnly: return "coarse";
    }
    return "?";
}

Strategy parse_strategy(const std::string& name) {
    if (name == "fine") return Strategy::Fine;
    if (name == "general") return Strategy::General;
    if (name == "avg") return Strategy::Avg;
    if (name == "rand") return Strategy::Rand;
    if (name == "coarse") return Strategy::CoarseOnly;
    throw InvalidArgument("unknown strategy '" + name + "' (expected fine|general|avg|rand|coarse)");
}

CompositionContext make_context(const AdapterBank& bank, Strategy mode, std::span<const int> domains, Rng* rng,
                                const ContextOptions& options) {
    const auto n_attr = bank.attribute_count();
    if (mode == Strategy::Fine && domains.size() != n_attr) {
        throw DataError("fine composition needs " + std::to_string(n_attr) + " domain ids, got " +
                        std::to_string(domains.size()));
    }
    if (mode == Strategy::Rand && rng == nullptr) throw InvalidArgument("rand composition needs a generator");

    CompositionContext ctx;
    ctx.mode = mode;
    // Each view gets one unit; a view may split its unit across sub-slots.
    std::vector<std::vector<Slot>> views;
    auto single = [](Granularity g, std::size_t a, int d = -1) {
        return std::vector<Slot>{Slot{ModuleKey{g, static_cast<int>(a), d}, 1.0}};
    };
    for (std::size_t a = 0; a < n_attr; ++a) {
        const bool fine_on = options.mask.fine_enabled(a);
        const auto n_dom = bank.domain_count(a);
        switch (mode) {
            case Strategy::Fine: {
                if (options.mask.coarse) views.push_back(single(Granularity::Coarse, a));
                if (!fine_on) break;
                const int d = domains[a];
                if (d < 0 || static_cast<std::size_t>(d) >= n_dom) {
                    if (!options.fallback_unknown_domains) {
                        throw DataError("unknown domain id " + std::to_string(d) + " for attribute '" +
                                        bank.config().attributes[a].name + "'");
                    }
                    ++ctx.fallbacks;
                    views.push_back(single(Granularity::Align, a));
                } else {
                    views.push_back(single(Granularity::Fine, a, d));
                }
                break;
            }
            case Strategy::General:
                if (options.mask.coarse) views.push_back(single(Granularity::Coarse, a));
                views.push_back(single(Granularity::Align, a));
                break;
            case Strategy::Avg: {
                views.push_back(single(Granularity::Align, a));
                if (!fine_on || n_dom == 0) break;
                std::vector<Slot> mean;
                for (std::size_t d = 0; d < n_dom; ++d)
                    mean.push_back(Slot{ModuleKey{Granularity::Fine, static_cast<int>(a), static_cast<int>(d)},
                                        1.0 / static_cast<double>(n_dom)});
                views.push_back(std::move(mean));
                break;
            }
            case Strategy::Rand:
                views.push_back(single(Granularity::Align, a));
                if (fine_on && n_dom > 0)
                    views.push_back(single(Granularity::Fine, a, static_cast<int>(rng->below(n_dom))));
                break;
            case Strategy::CoarseOnly:
                if (options.mask.coarse) views.push_back(single(Granularity::Coarse, a));
                break;
        }
    }
    if (views.empty()) throw InvalidArgument("composition '" + to_string(mode) + "' selects no modules");
    const double unit = 1.0 / static_cast<double>(views.size());
    for (auto& v : views)
        for (auto& s : v) ctx.slots.push_back(Slot{s.key, s.weight * unit});
    return ctx;
}

ComposedDelta::ComposedDelta(const AdapterBank& bank, std::size_t site, const CompositionContext& ctx) {
    if (ctx.slots.empty()) throw InvalidArgument("empty composition context");
    d_in_ = bank.site(site).d_in;
    d_out_ = bank.site(site).d_out;
    double total = 0.0;
    for (const auto& slot : ctx.slots) {
        const AdapterModule* m = bank.find(site, slot.key);
        if (m == nullptr) continue;
        if (input_dim(*m) != d_in_ || output_dim(*m) != d_out_) {
            throw ShapeError("module " + std::to_string(input_dim(*m)) + "x" + std::to_string(output_dim(*m)) +
                             " does not fit site " + bank.site(site).name);
        }
        total += slot.weight;
        auto it = std::find_if(terms_.begin(), terms_.end(),
                               [&](const WeightedModule& w) { return same_module(*w.module, *m); });
        if (it != terms_.end()) {
            it->weight += slot.weight;
        } else {
            terms_.push_back(WeightedModule{m, slot.weight});
        }
    }
    for (auto& t : terms_) t.weight /= total;
}

num::Var ComposedDelta::apply(num::Var x) const {
    if (terms_.empty()) throw StateError("apply on an empty composition");
    num::Var acc;
    for (const auto& t : terms_) {
        num::Var y = adapters::apply(*t.module, x);
        if (t.weight != 1.0) y = num::scale(y, t.weight);
        acc = acc.valid() ? num::add(acc, y) : y;
    }
    return acc;
}

Tensor ComposedDelta::materialize() const {
    Tensor acc = Tensor::zeros({d_in_, d_out_});
    for (const auto& t : terms_) acc = num::add(acc, num::scale(adapters::materialize(*t.module), t.weight));
    return acc;
}

// ---------------------------------------------------------------------------
// Parameter budget

namespace {
void validate(const ParamSchema& s) {
    if (s.fine_domains.empty()) throw InvalidArgument("param schema needs at least one attribute");
    if (s.d_in == 0 || s.d_out == 0) throw InvalidArgument("param schema dimensions must be positive");
    if (s.rank == 0 || s.rank > std::min(s.d_in, s.d_out)) {
        throw InvalidArgument("rank " + std::to_string(s.rank) + " must be in [1, min(d_in, d_out)]");
    }
    if (s.decomposed) {
        check_krona_factor(s.d_in, s.d_out, s.krona_factor == 0 ? default_krona_factor(s.d_in, s.d_out) : s.krona_factor);
    }
}
}  // namespace

std::uint64_t param_count(const ParamSchema& s) {
    validate(s);
    const std::uint64_t lora = static_cast<std::uint64_t>(s.rank) * (s.d_in + s.d_out);
    std::uint64_t total = 0;
    if (!s.decomposed) {
        for (auto f : s.fine_domains) total += (f + 2) * lora;
        return total;
    }
    for (auto f : s.fine_domains) total += s.d_in + static_cast<std::uint64_t>(f) * s.d_out;
    return total + 2 * lora;
}

AdapterBank bank_for_schema(const ParamSchema& s, std::uint64_t seed) {
    validate(s);
    BankConfig cfg;
    for (std::size_t a = 0; a < s.fine_domains.size(); ++a)
        cfg.attributes.push_back(AttributeSpec{"a" + std::to_string(a), s.fine_domains[a]});
    cfg.lora_rank = s.rank;
    cfg.fine_kind = s.decomposed ? ModuleKind::Krona : ModuleKind::Lora;
    cfg.krona_factor = s.krona_factor;
    cfg.share_c_per_attribute = s.decomposed;
    cfg.share_coarse_across_attributes = s.decomposed;
    cfg.seed = seed;
    return AdapterBank(std::move(cfg), {SiteSpec{"site", s.d_in, s.d_out, true, true}});
}

}  // namespace m2a::adapters
