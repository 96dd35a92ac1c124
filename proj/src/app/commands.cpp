// SPDX-License-Identifier: Apache-2.0
#include "app/commands.hpp"

#include <iomanip>
#include <sstream>

#include "common/error.hpp"
#include "common/fs.hpp"
#include "data/synthetic.hpp"
#include "eval/eval.hpp"
#include "training/training.hpp"

namespace m2a::app {

using nlohmann::json;

namespace {

fs::path sibling(const fs::path& path, const std::string& suffix) {
    fs::path p = path;
    p += suffix;
    return p;
}

void echo_config(const fs::path& path, const io::RunConfig& config) { io::save_run_config(path, config); }

data::Dataset load_split(const fs::path& dir, const std::string& split) {
    return data::load_dataset(dir / (split + ".jsonl"));
}

std::optional<data::Dataset> load_optional(const fs::path& dir, const std::string& split) {
    if (!fs::exists(dir / (split + ".jsonl"))) return std::nullopt;
    return load_split(dir, split);
}

/// Model with the architecture and base weights of `base`, adapters from
/// `config`.
std::unique_ptr<model::Model> model_on_base(const io::RunConfig& config, const io::Checkpoint& base,
                                            const data::Schema& schema, io::RunConfig& resolved) {
    resolved = config;
    resolved.backbone = io::run_config_of(base).backbone;
    resolved.backbone.seed = config.backbone.seed;
    auto m = io::build_model(resolved, schema, resolved.backbone.max_seq_len - 1);
    for (const auto& group : {m->base_parameters(), m->head_parameters()}) {
        for (const auto& p : group) {
            const num::Tensor* t = base.find(p->name);
            if (t == nullptr) throw IoError("base checkpoint lacks tensor '" + p->name + "'");
            if (t->shape() != p->value.shape()) throw IoError("base tensor '" + p->name + "' has the wrong shape");
            p->value = *t;
        }
    }
    return m;
}

json stop_json(const training::StopTrace& t) {
    return {{"dev_accuracy", t.dev_accuracy},
            {"best", t.best},
            {"best_epoch", t.best_index},
            {"steps", t.steps},
            {"stopped_early", t.stopped_early}};
}

}  // namespace

json cmd_generate(const io::RunConfig& config, const fs::path& out_dir) {
    const auto splits = data::generate_synthetic(config.synthetic);
    data::write_splits(splits, out_dir);
    echo_config(out_dir / "config.json", config);
    return {{"command", "generate"},
            {"out_dir", out_dir.string()},
            {"train", splits.train.samples.size()},
            {"dev", splits.dev.samples.size()},
            {"test", splits.test.samples.size()},
            {"unlabeled", splits.unlabeled.samples.size()},
            {"vocab_size", splits.train.schema.vocab_size}};
}

json cmd_pretrain(const io::RunConfig& config, const fs::path& data_dir, const fs::path& out_checkpoint) {
    data::Dataset corpus = load_split(data_dir, "train");
    if (auto extra = load_optional(data_dir, "unlabeled"))
        corpus.samples.insert(corpus.samples.end(), extra->samples.begin(), extra->samples.end());
    std::size_t longest = io::longest_sample(corpus);
    for (const char* split : {"dev", "test"})
        if (auto d = load_optional(data_dir, split)) longest = std::max(longest, io::longest_sample(*d));
    auto m = io::build_model(config, corpus.schema, longest);
    const double before = model::lm_loss(*m, corpus, config.pretrain.mask_ratio, config.pretrain.seed);
    const auto report = model::pretrain_base(*m, corpus, config.pretrain);
    const double after = model::lm_loss(*m, corpus, config.pretrain.mask_ratio, config.pretrain.seed);
    const json info = {{"kind", "base"}, {"lm_loss_before", before}, {"lm_loss_after", after}};
    io::save_checkpoint(out_checkpoint, io::model_checkpoint(*m, config, corpus.schema, info),
                        config.checkpoint_dtype);
    io::RunConfig echoed = config;
    echoed.backbone = m->config();
    echo_config(sibling(out_checkpoint, ".config.json"), echoed);
    return {{"command", "pretrain"},
            {"checkpoint", out_checkpoint.string()},
            {"steps", report.losses.size()},
            {"lm_loss_before", before},
            {"lm_loss_after", after}};
}

json cmd_train(const io::RunConfig& config, const TrainPaths& paths) {
    const data::Dataset train = load_split(paths.data_dir, "train");
    const data::Dataset dev = load_split(paths.data_dir, "dev");
    const auto unlabeled = load_optional(paths.data_dir, "unlabeled");
    const io::Checkpoint base = io::load_checkpoint(paths.base_checkpoint);
    io::RunConfig resolved;
    auto m = model_on_base(config, base, train.schema, resolved);

    training::JointTrainer trainer(*m, resolved.train);
    const auto fit = trainer.fit(train, dev, unlabeled ? &*unlabeled : nullptr);
    const fs::path log = paths.log.value_or(sibling(paths.out_checkpoint, ".log.jsonl"));
    trainer.write_log(log);

    const json summary = {{"joint", stop_json(fit.joint)},
                          {"separation", stop_json(fit.separation)},
                          {"general_dev_at_separation_start", fit.general_dev_at_separation_start},
                          {"general_dev_after_separation", fit.general_dev_after_separation},
                          {"nn_dev", fit.joint.best}};
    io::save_checkpoint(paths.out_checkpoint,
                        io::model_checkpoint(*m, resolved, train.schema, {{"kind", "m2a"}, {"training", summary}}),
                        resolved.checkpoint_dtype);
    echo_config(sibling(paths.out_checkpoint, ".config.json"), resolved);
    return {{"command", "train"}, {"checkpoint", paths.out_checkpoint.string()}, {"log", log.string()},
            {"summary", summary}};
}

json cmd_eval(const EvalArgs& args, std::string* table) {
    const data::Dataset ds = load_split(args.data_dir, args.split);
    const io::Checkpoint ckpt = io::load_checkpoint(args.checkpoint);
    const auto m = io::model_from_checkpoint(ckpt);
    eval::PredictOptions po;
    po.mode = args.strategy;
    po.seed = args.seed;
    eval::EvalReport r;
    if (args.ensemble) {
        std::vector<data::Sample> labeled;
        std::vector<int> gold, pred;
        for (const auto& x : ds.samples)
            if (x.label) labeled.push_back(x);
        if (labeled.empty()) throw DataError("no labeled samples to evaluate");
        const auto probs = eval::predict_ensemble(*m, labeled, po);
        for (std::size_t i = 0; i < labeled.size(); ++i) {
            gold.push_back(*labeled[i].label);
            std::size_t best = 0;
            for (std::size_t c = 1; c < probs.cols(); ++c)
                if (probs.at(i, c) > probs.at(i, best)) best = c;
            pred.push_back(static_cast<int>(best));
        }
        r = eval::metrics(gold, pred);
        r.strategy = adapters::to_string(args.strategy) + "/ensemble";
        r.seed = args.seed;
    } else {
        r = eval::evaluate(*m, ds, po);
    }
    json out = eval::to_json(r);
    out["split"] = args.split;
    out["checkpoint"] = args.checkpoint.string();
    if (args.report) write_file_atomic(*args.report, out.dump(2) + "\n");
    if (table != nullptr) *table = eval::to_table(r);
    return out;
}

json cmd_ablate(const io::RunConfig& config, const fs::path& data_dir, const fs::path& base_checkpoint,
                const fs::path& out_dir, std::string* table) {
    const data::Dataset train = load_split(data_dir, "train");
    const data::Dataset dev = load_split(data_dir, "dev");
    const data::Dataset test = load_split(data_dir, "test");
    const auto unlabeled = load_optional(data_dir, "unlabeled");
    const io::Checkpoint base = io::load_checkpoint(base_checkpoint);

    struct Variant {
        std::string name;
        io::RunConfig config;
    };
    std::vector<Variant> grid{{"full", config}};
    {
        Variant v{"- coarse view", config};
        v.config.train.mask.coarse = false;
        grid.push_back(v);
    }
    const auto n_attr = train.schema.attributes.size();
    for (std::size_t a = 0; a < n_attr; ++a) {
        Variant v{"- fine-grained view (" + train.schema.attributes[a].name + ")", config};
        v.config.train.mask.fine.assign(n_attr, true);
        v.config.train.mask.fine[a] = false;
        grid.push_back(v);
    }
    {
        Variant v{"- text generation task", config};
        v.config.train.alpha = 0.0;
        grid.push_back(v);
    }

    json rows = json::array();
    double full_acc = 0.0;
    for (const auto& v : grid) {
        io::RunConfig resolved;
        auto m = model_on_base(v.config, base, train.schema, resolved);
        training::JointTrainer trainer(*m, resolved.train);
        trainer.fit(train, dev, unlabeled ? &*unlabeled : nullptr);
        eval::PredictOptions po;
        po.mode = adapters::Strategy::Fine;
        po.mask = resolved.train.mask;
        po.seed = resolved.seed;
        const auto r = eval::evaluate(*m, test, po);
        if (rows.empty()) full_acc = r.accuracy;
        rows.push_back({{"variant", v.name},
                        {"accuracy", r.accuracy},
                        {"rmse", r.rmse},
                        {"macro_f1", r.macro_f1},
                        {"delta_accuracy", r.accuracy - full_acc}});
    }
    const json out = {{"command", "ablate"}, {"rows", rows}};
    fs::create_directories(out_dir);
    write_file_atomic(out_dir / "ablation.json", out.dump(2) + "\n");
    echo_config(out_dir / "config.json", config);
    if (table != nullptr) {
        std::ostringstream os;
        os << std::fixed << std::setprecision(4);
        os << std::left << std::setw(36) << "variant" << "  accuracy  delta\n";
        for (const auto& r : rows)
            os << std::left << std::setw(36) << r["variant"].get<std::string>() << "  "
               << r["accuracy"].get<double>() << "    " << std::showpos << r["delta_accuracy"].get<double>()
               << std::noshowpos << "\n";
        *table = os.str();
    }
    return out;
}

ParamsArgs params_args_from(const io::RunConfig& config) {
    ParamsArgs a;
    for (const auto& attr : config.synthetic.attributes) a.domains.push_back(attr.num_domains);
    a.d_in = config.backbone.d_model;
    a.d_out = config.backbone.d_model;
    a.rank = config.adapters.lora_rank;
    a.krona_factor = config.adapters.krona_factor;
    return a;
}

json cmd_params(const ParamsArgs& args) {
    if (args.domains.empty()) throw InvalidArgument("params needs at least one attribute");
    adapters::ParamSchema s;
    s.fine_domains = args.domains;
    s.d_in = args.d_in;
    s.d_out = args.d_out;
    s.rank = args.rank;
    s.krona_factor = args.krona_factor;
    s.decomposed = false;
    const auto plain = adapters::param_count(s);
    s.decomposed = true;
    const auto decomposed = adapters::param_count(s);
    json out = {{"command", "params"},
                {"domains", args.domains},
                {"d_in", args.d_in},
                {"d_out", args.d_out},
                {"rank", args.rank},
                {"non_decomposed", plain},
                {"decomposed", decomposed}};
    // Allocating a bank is only affordable for small schemas.
    constexpr std::uint64_t kAllocLimit = 20'000'000;
    if (plain <= kAllocLimit) {
        s.decomposed = false;
        const auto alloc_plain = adapters::bank_for_schema(s).scalar_count();
        s.decomposed = true;
        const auto alloc_dec = adapters::bank_for_schema(s).scalar_count();
        out["allocated"] = {{"non_decomposed", alloc_plain}, {"decomposed", alloc_dec}};
    }
    return out;
}

}  // namespace m2a::app
