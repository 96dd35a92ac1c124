// SPDX-License-Identifier: Apache-2.0
// Command-line front end over the m2a C API.
#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "m2a/m2a.h"

namespace {

using nlohmann::json;

struct Failure {
    m2a_status status;
    std::string message;
};

void check(m2a_status s) {
    if (s != M2A_OK) throw Failure{s, m2a_last_error()};
}

/// Takes ownership of a string returned by the library.
std::string take(char* s) {
    if (s == nullptr) return {};
    std::string out(s);
    m2a_string_free(s);
    return out;
}

struct ConfigHandle {
    m2a_config* ptr = nullptr;
    ~ConfigHandle() { m2a_config_free(ptr); }
};

/// Flags shared by commands that take a run configuration.
struct ConfigFlags {
    std::string path;
    std::optional<std::uint64_t> seed;
    std::optional<double> alpha;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
    cmd->add_option("--config", f.path, "Run configuration (JSON)");
    cmd->add_option("--seed", f.seed, "Master seed");
    cmd->add_option("--alpha", f.alpha, "Text-generation loss weight");
}

void load_config(const ConfigFlags& f, ConfigHandle& h) {
    if (f.path.empty())
        check(m2a_config_default(&h.ptr));
    else
        check(m2a_config_load(f.path.c_str(), &h.ptr));
    json patch = json::object();
    if (f.alpha) patch["train"]["alpha"] = *f.alpha;
    if (!patch.empty()) check(m2a_config_patch(h.ptr, patch.dump().c_str()));
    if (f.seed) check(m2a_config_set_seed(h.ptr, *f.seed));
}

void print_json(const std::string& s) { std::cout << s << "\n"; }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Multi-attribute multi-grained adapters on a small transformer"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(m2a_version()));

    ConfigFlags cfg;
    std::string out, data, base, checkpoint, log, split = "test", strategy = "fine", report;
    std::uint64_t eval_seed = 0;
    bool ensemble = false, show_table = false;

    auto* gen = app.add_subcommand("generate", "Write a synthetic dataset");
    add_config_flags(gen, cfg);
    gen->add_option("--out", out, "Output directory")->required();

    auto* pre = app.add_subcommand("pretrain", "Pretrain the base model with the LM objective");
    add_config_flags(pre, cfg);
    pre->add_option("--data", data, "Dataset directory")->required();
    pre->add_option("--out", out, "Output checkpoint")->required();

    auto* train = app.add_subcommand("train", "Joint training with module separation");
    add_config_flags(train, cfg);
    train->add_option("--data", data, "Dataset directory")->required();
    train->add_option("--base", base, "Base checkpoint")->required();
    train->add_option("--out", out, "Output checkpoint")->required();
    train->add_option("--log", log, "Training log (JSONL)");

    auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
    ev->add_option("--data", data, "Dataset directory")->required();
    ev->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
    ev->add_option("--split", split, "Split file stem")->capture_default_str();
    ev->add_option("--strategy", strategy, "fine|general|avg|rand|coarse")
        ->check(CLI::IsMember({"fine", "general", "avg", "rand", "coarse"}))
        ->capture_default_str();
    ev->add_option("--seed", eval_seed, "Seed for rand draws");
    ev->add_flag("--ensemble", ensemble, "Average view probabilities instead of fusing weights");
    ev->add_option("--report", report, "Write the JSON report here");
    ev->add_flag("--table", show_table, "Print a table instead of JSON");

    auto* abl = app.add_subcommand("ablate", "Remove views or the generation term and compare");
    add_config_flags(abl, cfg);
    abl->add_option("--data", data, "Dataset directory")->required();
    abl->add_option("--base", base, "Base checkpoint")->required();
    abl->add_option("--out", out, "Output directory")->required();
    abl->add_flag("--table", show_table, "Print a table instead of JSON");

    std::vector<std::size_t> domains;
    std::optional<std::size_t> d_in, d_out, rank, krona;
    auto* par = app.add_subcommand("params", "Adapter parameter budget for both schemes");
    add_config_flags(par, cfg);
    par->add_option("--domains", domains, "Fine domains per attribute")->delimiter(',');
    par->add_option("--d-in", d_in, "Input width");
    par->add_option("--d-out", d_out, "Output width");
    par->add_option("--rank", rank, "LoRA rank");
    par->add_option("--krona-factor", krona, "KronA factor (0 = default)");

    auto* show = app.add_subcommand("config", "Print the resolved configuration");
    add_config_flags(show, cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << json{{"error", {{"status", "usage_error"}, {"message", e.what()}}}}.dump() << "\n";
        return 2;
    }

    try {
        ConfigHandle h;
        if (*gen) {
            load_config(cfg, h);
            char* r = nullptr;
            check(m2a_generate(h.ptr, out.c_str(), &r));
            print_json(take(r));
        } else if (*pre) {
            load_config(cfg, h);
            char* r = nullptr;
            check(m2a_pretrain(h.ptr, data.c_str(), out.c_str(), &r));
            print_json(take(r));
        } else if (*train) {
            load_config(cfg, h);
            char* r = nullptr;
            check(m2a_train(h.ptr, data.c_str(), base.c_str(), out.c_str(), log.empty() ? nullptr : log.c_str(), &r));
            print_json(take(r));
        } else if (*ev) {
            char* r = nullptr;
            char* t = nullptr;
            check(m2a_eval(data.c_str(), split.c_str(), checkpoint.c_str(), strategy.c_str(), eval_seed,
                           ensemble ? 1 : 0, report.empty() ? nullptr : report.c_str(), &r, &t));
            const std::string js = take(r), table = take(t);
            if (show_table)
                std::cout << table;
            else
                print_json(js);
        } else if (*abl) {
            load_config(cfg, h);
            char* r = nullptr;
            char* t = nullptr;
            check(m2a_ablate(h.ptr, data.c_str(), base.c_str(), out.c_str(), &r, &t));
            const std::string js = take(r), table = take(t);
            if (show_table)
                std::cout << table;
            else
                print_json(js);
        } else if (*par) {
            load_config(cfg, h);
            char* c = nullptr;
            check(m2a_config_to_json(h.ptr, &c));
            const json conf = json::parse(take(c));
            json args;
            if (domains.empty())
                for (const auto& a : conf["synthetic"]["attributes"]) domains.push_back(a["domains"].get<std::size_t>());
            args["domains"] = domains;
            args["d_in"] = d_in.value_or(conf["backbone"]["d_model"].get<std::size_t>());
            args["d_out"] = d_out.value_or(args["d_in"].get<std::size_t>());
            args["rank"] = rank.value_or(conf["adapters"]["lora_rank"].get<std::size_t>());
            args["krona_factor"] = krona.value_or(conf["adapters"]["krona_factor"].get<std::size_t>());
            char* r = nullptr;
            check(m2a_params(args.dump().c_str(), &r));
            print_json(take(r));
        } else if (*show) {
            load_config(cfg, h);
            char* c = nullptr;
            check(m2a_config_to_json(h.ptr, &c));
            print_json(take(c));
        }
    } catch (const Failure& f) {
        std::cerr << json{{"error", {{"status", m2a_status_name(f.status)}, {"code", static_cast<int>(f.status)},
                                     {"message", f.message}}}}
                         .dump()
                  << "\n";
        return static_cast<int>(f.status);
    }
    return 0;
}
