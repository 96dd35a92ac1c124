// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "common/random.hpp"
#include "numerics/autograd.hpp"
#include "numerics/tensor.hpp"

namespace m2a::adapters {

/// Low-rank additive update delta = A·B with A[d_in×r], B[r×d_out].
struct LoraModule {
    num::ParamPtr a;
    num::ParamPtr b;
    std::size_t rank = 0;
};

/// Kronecker update delta = C ⊗ D with C[(d_in/r')×r'], D[r'×(d_out/r')].
/// `c` may be shared between modules.
struct KronaModule {
    num::ParamPtr c;
    num::ParamPtr d;
    std::size_t factor = 0;
};

using AdapterModule = std::variant<LoraModule, KronaModule>;

enum class ModuleKind { Lora, Krona };

std::size_t input_dim(const AdapterModule& m);
std::size_t output_dim(const AdapterModule& m);
std::vector<num::ParamPtr> parameters(const AdapterModule& m);

/// Dense d_in×d_out update.
num::Tensor materialize(const AdapterModule& m);
/// x · delta computed through the factors.
num::Var apply(const AdapterModule& m, num::Var x);

/// sqrt(6 / d_in).
double default_init_bound(std::size_t d_in);
/// Divisor of gcd(d_in, d_out) closest to sqrt(d_in); ties go to the smaller.
std::size_t default_krona_factor(std::size_t d_in, std::size_t d_out);
/// Throws FactorizationError unless `factor` divides both dimensions.
void check_krona_factor(std::size_t d_in, std::size_t d_out, std::size_t factor);

struct ModuleDims {
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    /// LoRA rank or KronA factor r'; 0 picks the KronA default.
    std::size_t rank = 0;
};

/// Fresh module: A (or C) ~ U(-bound, bound), B (or D) = 0. `bound` <= 0
/// selects `default_init_bound(d_in)`.
AdapterModule init_module(ModuleKind kind, const ModuleDims& dims, std::uint64_t seed, double bound = 0.0,
                          const std::string& name = "m");

// ---------------------------------------------------------------------------
// Bank

enum class Granularity { Coarse, Align, Fine };

std::string to_string(Granularity g);

struct AttributeSpec {
    std::string name;
    std::size_t num_domains = 0;
};

struct BankConfig {
    std::vector<AttributeSpec> attributes;
    std::size_t lora_rank = 4;
    ModuleKind fine_kind = ModuleKind::Krona;
    /// KronA factor r'; 0 picks `default_krona_factor` per site.
    std::size_t krona_factor = 0;
    bool share_c_per_attribute = true;
    /// Shares both the coarse (c) and alignment (c') modules across attributes.
    bool share_coarse_across_attributes = true;
    /// Uniform init bound for A/C; <= 0 means sqrt(6 / d_in).
    double init_bound = 0.0;
    std::uint64_t seed = 0;
};

/// One injected linear layer.
struct SiteSpec {
    std::string name;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    bool coarse = true;
    bool fine = true;
};

struct ModuleKey {
    Granularity granularity = Granularity::Coarse;
    int attribute = 0;
    /// Fine-grained domain id; ignored for coarse/alignment keys.
    int domain = -1;
};

/// All w^(ag) modules, per injection site. Parameters are named
/// "site/attr/granularity/{A|B|C|D}" with attr "all" for shared modules
/// and granularity one of c, cp, f<id> (or f for a shared C).
class AdapterBank {
public:
    AdapterBank() = default;
    AdapterBank(BankConfig config, std::vector<SiteSpec> sites);

    const BankConfig& config() const { return config_; }
    std::size_t site_count() const { return sites_.size(); }
    const SiteSpec& site(std::size_t i) const { return sites_.at(i).spec; }
    std::optional<std::size_t> site_index(const std::string& name) const;
    std::size_t attribute_count() const { return config_.attributes.size(); }
    std::size_t domain_count(std::size_t attribute) const { return config_.attributes.at(attribute).num_domains; }

    /// Module for `key` at `site`, or nullptr when that granularity is not
    /// injected there. Throws InvalidArgument for out-of-range keys.
    const AdapterModule* find(std::size_t site, const ModuleKey& key) const;

    /// Unique parameters in a stable order.
    std::vector<num::ParamPtr> parameters() const;
    std::vector<num::ParamPtr> parameters(Granularity g) const;
    /// Total number of allocated scalars (shared tensors counted once).
    std::size_t scalar_count() const;

private:
    struct SiteModules {
        SiteSpec spec;
        std::vector<AdapterModule> coarse;  // one entry when shared
        std::vector<AdapterModule> align;   // one entry when shared
        std::vector<std::vector<AdapterModule>> fine;  // [attribute][domain]
    };

    void check_key(const ModuleKey& key) const;

    BankConfig config_;
    std::vector<SiteModules> sites_;
};

// ---------------------------------------------------------------------------
// Composition

/// Which modules a forward pass averages:
///   Fine       c + f per attribute (NN)
///   General    c + c' per attribute (NN†)
///   Avg        c' + mean of every fine domain per attribute
///   Rand       c' + one uniformly drawn fine domain per attribute
///   CoarseOnly c per attribute
enum class Strategy { Fine, General, Avg, Rand, CoarseOnly };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

struct Slot {
    ModuleKey key;
    double weight = 0.0;
};

struct CompositionContext {
    Strategy mode = Strategy::Fine;
    std::vector<Slot> slots;
    /// Attributes whose domain id was unknown and replaced by c'.
    int fallbacks = 0;
};

/// Views removed for ablations.
struct ViewMask {
    bool coarse = true;
    /// Per-attribute fine view switch; empty keeps all.
    std::vector<bool> fine;

    bool fine_enabled(std::size_t attribute) const {
        return fine.empty() || (attribute < fine.size() && fine[attribute]);
    }
};

struct ContextOptions {
    ViewMask mask;
    /// Substitute c' for unknown domain ids instead of throwing.
    bool fallback_unknown_domains = false;
};

/// Builds Ω for one sample. `domains[a]` is the sample's domain under
/// attribute a. Rand draws from `rng`, which must be non-null in that mode.
CompositionContext make_context(const AdapterBank& bank, Strategy mode, std::span<const int> domains,
                                Rng* rng = nullptr, const ContextOptions& options = {});

struct WeightedModule {
    const AdapterModule* module = nullptr;
    double weight = 0.0;
};

/// The averaged update (1/|ctx|) Σ w_i at one site, applied through the
/// factors. Slots whose module is not injected at the site are dropped and
/// the remaining weights renormalized; repeated references to the same
/// module are merged.
class ComposedDelta {
public:
    ComposedDelta(const AdapterBank& bank, std::size_t site, const CompositionContext& ctx);

    bool empty() const { return terms_.empty(); }
    const std::vector<WeightedModule>& terms() const { return terms_; }

    num::Var apply(num::Var x) const;
    num::Tensor materialize() const;

private:
    std::size_t d_in_ = 0;
    std::size_t d_out_ = 0;
    std::vector<WeightedModule> terms_;
};

// ---------------------------------------------------------------------------
// Parameter budget

struct ParamSchema {
    /// |a|_f per attribute.
    std::vector<std::size_t> fine_domains;
    std::size_t d_in = 0;
    std::size_t d_out = 0;
    std::size_t rank = 0;
    bool decomposed = false;
    /// KronA factor for the decomposed scheme; 0 = default.
    std::size_t krona_factor = 0;
};

/// Scalars per injected matrix:
///   plain      Σ_a (|a|_f + 2)·r·(d_in + d_out)
///   decomposed Σ_a (d_in + |a|_f·d_out) + 2·r·(d_in + d_out)
std::uint64_t param_count(const ParamSchema& schema);

/// Single-site bank allocating exactly the scheme `param_count` describes.
AdapterBank bank_for_schema(const ParamSchema& schema, std::uint64_t seed = 0);

}  // namespace m2a::adapters
