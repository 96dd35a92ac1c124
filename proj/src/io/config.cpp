// SPDX-License-Identifier: Apache-2.0
#include "io/config.hpp"

#include <set>

#include "common/error.hpp"
#include "common/fs.hpp"
#include "common/random.hpp"

namespace m2a::io {

using nlohmann::json;

namespace {

/// Reads known keys of one config section and rejects the rest.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw InvalidArgument("config section '" + path_ + "' must be an object");
    }

    template <typename T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw InvalidArgument("config field '" + name(key) + "': " + e.what());
        }
    }

    template <typename T, typename Parse>
    void get_enum(const char* key, T& out, Parse parse) {
        std::string s;
        get(key, s);
        if (!j_.contains(key)) return;
        try {
            out = parse(s);
        } catch (const InvalidArgument& e) {
            throw InvalidArgument("config field '" + name(key) + "': " + e.what());
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& [key, _] : j_.items())
            if (!seen_.count(key)) throw InvalidArgument("unknown config field '" + name(key) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::string kind_name(adapters::ModuleKind k) { return k == adapters::ModuleKind::Lora ? "lora" : "krona"; }

adapters::ModuleKind parse_kind(const std::string& s) {
    if (s == "lora") return adapters::ModuleKind::Lora;
    if (s == "krona") return adapters::ModuleKind::Krona;
    throw InvalidArgument("unknown module kind '" + s + "' (expected lora|krona)");
}

json sites_json(const std::vector<model::SiteKind>& v) {
    json out = json::array();
    for (auto k : v) out.push_back(model::to_string(k));
    return out;
}

void read_sites(Section& s, const char* key, std::vector<model::SiteKind>& out) {
    std::vector<std::string> names;
    s.get(key, names);
    if (const json* j = s.child(key); j == nullptr) return;
    out.clear();
    try {
        for (const auto& n : names) out.push_back(model::parse_site_kind(n));
    } catch (const InvalidArgument& e) {
        throw InvalidArgument("config field '" + s.name(key) + "': " + e.what());
    }
}

}  // namespace

model::BackboneConfig default_backbone() {
    model::BackboneConfig b;
    b.vocab_size = 0;
    b.num_classes = 0;
    b.max_seq_len = 0;
    return b;
}

void apply_seed(RunConfig& c, std::uint64_t seed) {
    c.seed = seed;
    c.backbone.seed = Rng::mix(seed, 1);
    c.pretrain.seed = Rng::mix(seed, 2);
    c.train.seed = Rng::mix(seed, 3);
}

json to_json(const RunConfig& c) {
    json attrs = json::array();
    for (const auto& a : c.synthetic.attributes) attrs.push_back({{"name", a.name}, {"domains", a.num_domains}});
    const auto& s = c.synthetic;
    const auto& b = c.backbone;
    const auto& t = c.train;
    json fine_mask = json::array();
    for (bool f : t.mask.fine) fine_mask.push_back(f);
    return {
        {"seed", c.seed},
        {"strategy", adapters::to_string(c.strategy)},
        {"checkpoint_dtype", to_string(c.checkpoint_dtype)},
        {"synthetic",
         {{"attributes", attrs},
          {"vocab_skew", s.vocab_skew},
          {"label_bias", s.label_bias},
          {"num_classes", s.num_classes},
          {"samples_per_domain", s.samples_per_domain},
          {"unlabeled_per_domain", s.unlabeled_per_domain},
          {"seq_len", s.seq_len},
          {"vocab_size", s.vocab_size},
          {"dev_fraction", s.dev_fraction},
          {"test_fraction", s.test_fraction},
          {"sentiment_rate", s.sentiment_rate},
          {"sentiment_purity", s.sentiment_purity},
          {"domain_rate", s.domain_rate},
          {"words_per_class", s.words_per_class},
          {"words_per_domain", s.words_per_domain},
          {"max_label_offset", s.max_label_offset},
          {"seed", s.seed}}},
        {"backbone",
         {{"num_layers", b.num_layers},
          {"d_model", b.d_model},
          {"num_heads", b.num_heads},
          {"d_ff", b.d_ff},
          {"vocab_size", b.vocab_size},
          {"max_seq_len", b.max_seq_len},
          {"num_classes", b.num_classes},
          {"mode", model::to_string(b.mode)},
          {"cls_position", model::to_string(b.cls_position)},
          {"dropout", b.dropout},
          {"coarse_sites", sites_json(b.coarse_sites)},
          {"fine_sites", sites_json(b.fine_sites)}}},
        {"adapters",
         {{"lora_rank", c.adapters.lora_rank},
          {"fine_kind", kind_name(c.adapters.fine_kind)},
          {"krona_factor", c.adapters.krona_factor},
          {"share_c_per_attribute", c.adapters.share_c_per_attribute},
          {"share_coarse_across_attributes", c.adapters.share_coarse_across_attributes},
          {"init_bound", c.adapters.init_bound}}},
        {"pretrain",
         {{"steps", c.pretrain.steps},
          {"batch_size", c.pretrain.batch_size},
          {"learning_rate", c.pretrain.learning_rate},
          {"mask_ratio", c.pretrain.mask_ratio}}},
        {"train",
         {{"alpha", t.alpha},
          {"lambda_c", t.lambda_c},
          {"kl_weight", t.kl_weight},
          {"stop_grad_teacher", t.stop_grad_teacher},
          {"learning_rate", t.optim.learning_rate},
          {"beta1", t.optim.beta1},
          {"beta2", t.optim.beta2},
          {"eps", t.optim.eps},
          {"weight_decay", t.optim.weight_decay},
          {"clip_norm", t.optim.clip_norm},
          {"batch_size", t.batch_size},
          {"max_epochs", t.max_epochs},
          {"patience", t.patience},
          {"separation", t.separation},
          {"separation_max_epochs", t.separation_max_epochs},
          {"mask_ratio", t.mask_ratio},
          {"bert_style_mask", t.bert_style_mask},
          {"unlabeled_mix", t.unlabeled_mix},
          {"mask_coarse", t.mask.coarse},
          {"mask_fine", fine_mask}}},
    };
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    Section root(j, "");
    std::uint64_t seed = 0;
    root.get("seed", seed);
    root.get_enum("strategy", c.strategy, adapters::parse_strategy);
    root.get_enum("checkpoint_dtype", c.checkpoint_dtype, parse_dtype);

    if (const json* sj = root.child("synthetic")) {
        Section s(*sj, "synthetic");
        auto& o = c.synthetic;
        if (const json* aj = s.child("attributes")) {
            if (!aj->is_array()) throw InvalidArgument("config field 'synthetic.attributes' must be an array");
            o.attributes.clear();
            for (const auto& a : *aj) {
                Section as(a, "synthetic.attributes");
                data::Attribute attr;
                as.get("name", attr.name);
                as.get("domains", attr.num_domains);
                as.finish();
                o.attributes.push_back(attr);
            }
        }
        s.get("vocab_skew", o.vocab_skew);
        s.get("label_bias", o.label_bias);
        s.get("num_classes", o.num_classes);
        s.get("samples_per_domain", o.samples_per_domain);
        s.get("unlabeled_per_domain", o.unlabeled_per_domain);
        s.get("seq_len", o.seq_len);
        s.get("vocab_size", o.vocab_size);
        s.get("dev_fraction", o.dev_fraction);
        s.get("test_fraction", o.test_fraction);
        s.get("sentiment_rate", o.sentiment_rate);
        s.get("sentiment_purity", o.sentiment_purity);
        s.get("domain_rate", o.domain_rate);
        s.get("words_per_class", o.words_per_class);
        s.get("words_per_domain", o.words_per_domain);
        s.get("max_label_offset", o.max_label_offset);
        s.get("seed", o.seed);
        s.finish();
    }
    if (const json* bj = root.child("backbone")) {
        Section s(*bj, "backbone");
        auto& o = c.backbone;
        s.get("num_layers", o.num_layers);
        s.get("d_model", o.d_model);
        s.get("num_heads", o.num_heads);
        s.get("d_ff", o.d_ff);
        s.get("vocab_size", o.vocab_size);
        s.get("max_seq_len", o.max_seq_len);
        s.get("num_classes", o.num_classes);
        s.get_enum("mode", o.mode, model::parse_lm_mode);
        s.get_enum("cls_position", o.cls_position, model::parse_cls_position);
        s.get("dropout", o.dropout);
        read_sites(s, "coarse_sites", o.coarse_sites);
        read_sites(s, "fine_sites", o.fine_sites);
        s.finish();
    }
    if (const json* aj = root.child("adapters")) {
        Section s(*aj, "adapters");
        auto& o = c.adapters;
        s.get("lora_rank", o.lora_rank);
        s.get_enum("fine_kind", o.fine_kind, parse_kind);
        s.get("krona_factor", o.krona_factor);
        s.get("share_c_per_attribute", o.share_c_per_attribute);
        s.get("share_coarse_across_attributes", o.share_coarse_across_attributes);
        s.get("init_bound", o.init_bound);
        s.finish();
    }
    if (const json* pj = root.child("pretrain")) {
        Section s(*pj, "pretrain");
        s.get("steps", c.pretrain.steps);
        s.get("batch_size", c.pretrain.batch_size);
        s.get("learning_rate", c.pretrain.learning_rate);
        s.get("mask_ratio", c.pretrain.mask_ratio);
        s.finish();
    }
    if (const json* tj = root.child("train")) {
        Section s(*tj, "train");
        auto& o = c.train;
        s.get("alpha", o.alpha);
        s.get("lambda_c", o.lambda_c);
        s.get("kl_weight", o.kl_weight);
        s.get("stop_grad_teacher", o.stop_grad_teacher);
        s.get("learning_rate", o.optim.learning_rate);
        s.get("beta1", o.optim.beta1);
        s.get("beta2", o.optim.beta2);
        s.get("eps", o.optim.eps);
        s.get("weight_decay", o.optim.weight_decay);
        s.get("clip_norm", o.optim.clip_norm);
        s.get("batch_size", o.batch_size);
        s.get("max_epochs", o.max_epochs);
        s.get("patience", o.patience);
        s.get("separation", o.separation);
        s.get("separation_max_epochs", o.separation_max_epochs);
        s.get("mask_ratio", o.mask_ratio);
        s.get("bert_style_mask", o.bert_style_mask);
        s.get("unlabeled_mix", o.unlabeled_mix);
        s.get("mask_coarse", o.mask.coarse);
        s.get("mask_fine", o.mask.fine);
        s.finish();
    }
    root.finish();
    apply_seed(c, seed);
    return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw InvalidArgument(path.string() + ": " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
    write_file_atomic(path, to_json(config).dump(2) + "\n");
}

std::size_t longest_sample(const data::Dataset& dataset) {
    std::size_t n = 0;
    for (const auto& x : dataset.samples) n = std::max(n, x.tokens.size());
    return n;
}

model::BackboneConfig resolve_backbone(const RunConfig& config, const data::Schema& schema, std::size_t longest) {
    model::BackboneConfig b = config.backbone;
    if (b.vocab_size == 0) b.vocab_size = schema.vocab_size;
    if (b.vocab_size < schema.vocab_size) {
        throw InvalidArgument("backbone vocab_size " + std::to_string(b.vocab_size) + " below the data's " +
                              std::to_string(schema.vocab_size));
    }
    if (b.num_classes == 0) b.num_classes = schema.num_classes;
    if (b.num_classes != schema.num_classes) throw InvalidArgument("backbone num_classes differs from the data");
    if (b.max_seq_len == 0) b.max_seq_len = longest + 1;
    if (b.max_seq_len < longest + 1) {
        throw InvalidArgument("backbone max_seq_len " + std::to_string(b.max_seq_len) + " too short for samples of " +
                              std::to_string(longest) + " tokens");
    }
    return b;
}

adapters::BankConfig bank_config(const RunConfig& config, const data::Schema& schema) {
    adapters::BankConfig bc = model::bank_config_for(schema, config.adapters.lora_rank, Rng::mix(config.seed, 4));
    bc.fine_kind = config.adapters.fine_kind;
    bc.krona_factor = config.adapters.krona_factor;
    bc.share_c_per_attribute = config.adapters.share_c_per_attribute;
    bc.share_coarse_across_attributes = config.adapters.share_coarse_across_attributes;
    bc.init_bound = config.adapters.init_bound;
    return bc;
}

std::unique_ptr<model::Model> build_model(const RunConfig& config, const data::Schema& schema, std::size_t longest) {
    return std::make_unique<model::Model>(resolve_backbone(config, schema, longest), bank_config(config, schema));
}

Checkpoint model_checkpoint(const model::Model& model, const RunConfig& config, const data::Schema& schema,
                            json info) {
    RunConfig resolved = config;
    resolved.backbone = model.config();
    resolved.backbone.seed = config.backbone.seed;
    Checkpoint ckpt;
    ckpt.config = {{"run", to_json(resolved)}, {"schema", json::parse(data::schema_json(schema))}};
    ckpt.info = std::move(info);
    for (const auto& p : model.all_parameters()) ckpt.tensors.emplace_back(p->name, p->value);
    return ckpt;
}

RunConfig run_config_of(const Checkpoint& ckpt) {
    if (!ckpt.config.contains("run")) throw IoError("checkpoint lacks a run config");
    return run_config_from_json(ckpt.config.at("run"));
}

data::Schema schema_of(const Checkpoint& ckpt) {
    if (!ckpt.config.contains("schema")) throw IoError("checkpoint lacks a schema");
    return data::parse_schema_json(ckpt.config.at("schema").dump());
}

std::unique_ptr<model::Model> model_from_checkpoint(const Checkpoint& ckpt) {
    const RunConfig run = run_config_of(ckpt);
    const data::Schema schema = schema_of(ckpt);
    auto m = build_model(run, schema, run.backbone.max_seq_len - 1);
    load_tensors(*m, ckpt, true);
    return m;
}

std::size_t load_tensors(model::Model& model, const Checkpoint& ckpt, bool require_all) {
    std::size_t copied = 0;
    for (const auto& p : model.all_parameters()) {
        const num::Tensor* t = ckpt.find(p->name);
        if (t == nullptr) {
            if (require_all) throw IoError("checkpoint lacks tensor '" + p->name + "'");
            continue;
        }
        if (t->shape() != p->value.shape()) {
            throw IoError("tensor '" + p->name + "' has shape " + num::to_string(t->shape()) + ", model expects " +
                          num::to_string(p->value.shape()));
        }
        p->value = *t;
        ++copied;
    }
    return copied;
}

}  // namespace m2a::io
