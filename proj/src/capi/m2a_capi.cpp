// SPDX-License-Identifier: Apache-2.0
#include "m2a/m2a.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <string>

#include <json.hpp>

#include "app/commands.hpp"
#include "common/error.hpp"
#include "eval/eval.hpp"
#include "io/config.hpp"
#include "numerics/ops.hpp"

struct m2a_config {
    m2a::io::RunConfig run;
};

struct m2a_model {
    std::unique_ptr<m2a::model::Model> model;
};

namespace {

thread_local std::string g_last_error;

char* dup(const std::string& s) {
    char* out = static_cast<char*>(std::malloc(s.size() + 1));
    if (out == nullptr) throw std::bad_alloc();
    std::memcpy(out, s.c_str(), s.size() + 1);
    return out;
}

void put(char** out, const std::string& s) {
    if (out != nullptr) *out = dup(s);
}

void require(const void* p, const char* what) {
    if (p == nullptr) throw m2a::InvalidArgument(std::string(what) + " must not be null");
}

template <typename F>
m2a_status guard(F&& f) {
    try {
        f();
        g_last_error.clear();
        return M2A_OK;
    } catch (const m2a::FactorizationError& e) {
        g_last_error = e.what();
        return M2A_ERR_FACTORIZATION;
    } catch (const m2a::ShapeError& e) {
        g_last_error = e.what();
        return M2A_ERR_SHAPE;
    } catch (const m2a::InvalidArgument& e) {
        g_last_error = e.what();
        return M2A_ERR_INVALID_ARGUMENT;
    } catch (const m2a::DataError& e) {
        g_last_error = e.what();
        return M2A_ERR_DATA;
    } catch (const m2a::StateError& e) {
        g_last_error = e.what();
        return M2A_ERR_STATE;
    } catch (const m2a::NumericError& e) {
        g_last_error = e.what();
        return M2A_ERR_NUMERIC;
    } catch (const m2a::IoError& e) {
        g_last_error = e.what();
        return M2A_ERR_IO;
    } catch (const nlohmann::json::exception& e) {
        g_last_error = e.what();
        return M2A_ERR_INVALID_ARGUMENT;
    } catch (const std::filesystem::filesystem_error& e) {
        g_last_error = e.what();
        return M2A_ERR_IO;
    } catch (const std::exception& e) {
        g_last_error = e.what();
        return M2A_ERR_INTERNAL;
    } catch (...) {
        g_last_error = "unknown error";
        return M2A_ERR_INTERNAL;
    }
}

}  // namespace

extern "C" {

const char* m2a_version(void) { return "0.1.0"; }

const char* m2a_last_error(void) { return g_last_error.c_str(); }

const char* m2a_status_name(m2a_status status) {
    switch (status) {
        case M2A_OK: return "ok";
        case M2A_ERR_INVALID_ARGUMENT: return "invalid_argument";
        case M2A_ERR_SHAPE: return "shape_error";
        case M2A_ERR_FACTORIZATION: return "factorization_error";
        case M2A_ERR_DATA: return "data_error";
        case M2A_ERR_STATE: return "state_error";
        case M2A_ERR_NUMERIC: return "numeric_error";
        case M2A_ERR_IO: return "io_error";
        default: return "internal_error";
    }
}

void m2a_string_free(char* s) { std::free(s); }

m2a_status m2a_config_default(m2a_config** out) {
    return guard([&] {
        require(out, "out");
        auto c = std::make_unique<m2a_config>();
        m2a::io::apply_seed(c->run, 0);
        *out = c.release();
    });
}

m2a_status m2a_config_load(const char* path, m2a_config** out) {
    return guard([&] {
        require(path, "path");
        require(out, "out");
        *out = new m2a_config{m2a::io::load_run_config(path)};
    });
}

m2a_status m2a_config_from_json(const char* json, m2a_config** out) {
    return guard([&] {
        require(json, "json");
        require(out, "out");
        *out = new m2a_config{m2a::io::run_config_from_json(nlohmann::json::parse(json))};
    });
}

m2a_status m2a_config_patch(m2a_config* config, const char* json_patch) {
    return guard([&] {
        require(config, "config");
        require(json_patch, "json_patch");
        nlohmann::json j = m2a::io::to_json(config->run);
        j.merge_patch(nlohmann::json::parse(json_patch));
        config->run = m2a::io::run_config_from_json(j);
    });
}

m2a_status m2a_config_set_seed(m2a_config* config, uint64_t seed) {
    return guard([&] {
        require(config, "config");
        m2a::io::apply_seed(config->run, seed);
    });
}

m2a_status m2a_config_to_json(const m2a_config* config, char** out) {
    return guard([&] {
        require(config, "config");
        require(out, "out");
        *out = dup(m2a::io::to_json(config->run).dump(2));
    });
}

void m2a_config_free(m2a_config* config) { delete config; }

m2a_status m2a_generate(const m2a_config* config, const char* out_dir, char** result) {
    return guard([&] {
        require(config, "config");
        require(out_dir, "out_dir");
        put(result, m2a::app::cmd_generate(config->run, out_dir).dump());
    });
}

m2a_status m2a_pretrain(const m2a_config* config, const char* data_dir, const char* out_checkpoint, char** result) {
    return guard([&] {
        require(config, "config");
        require(data_dir, "data_dir");
        require(out_checkpoint, "out_checkpoint");
        put(result, m2a::app::cmd_pretrain(config->run, data_dir, out_checkpoint).dump());
    });
}

m2a_status m2a_train(const m2a_config* config, const char* data_dir, const char* base_checkpoint,
                     const char* out_checkpoint, const char* log_path, char** result) {
    return guard([&] {
        require(config, "config");
        require(data_dir, "data_dir");
        require(base_checkpoint, "base_checkpoint");
        require(out_checkpoint, "out_checkpoint");
        m2a::app::TrainPaths p{data_dir, base_checkpoint, out_checkpoint, std::nullopt};
        if (log_path != nullptr) p.log = log_path;
        put(result, m2a::app::cmd_train(config->run, p).dump());
    });
}

m2a_status m2a_eval(const char* data_dir, const char* split, const char* checkpoint, const char* strategy,
                    uint64_t seed, int ensemble, const char* report_path, char** result, char** table) {
    return guard([&] {
        require(data_dir, "data_dir");
        require(checkpoint, "checkpoint");
        m2a::app::EvalArgs a;
        a.data_dir = data_dir;
        if (split != nullptr) a.split = split;
        a.checkpoint = checkpoint;
        if (strategy != nullptr) a.strategy = m2a::adapters::parse_strategy(strategy);
        a.seed = seed;
        a.ensemble = ensemble != 0;
        if (report_path != nullptr) a.report = report_path;
        std::string t;
        const auto out = m2a::app::cmd_eval(a, &t);
        put(result, out.dump());
        put(table, t);
    });
}

m2a_status m2a_ablate(const m2a_config* config, const char* data_dir, const char* base_checkpoint,
                      const char* out_dir, char** result, char** table) {
    return guard([&] {
        require(config, "config");
        require(data_dir, "data_dir");
        require(base_checkpoint, "base_checkpoint");
        require(out_dir, "out_dir");
        std::string t;
        const auto out = m2a::app::cmd_ablate(config->run, data_dir, base_checkpoint, out_dir, &t);
        put(result, out.dump());
        put(table, t);
    });
}

m2a_status m2a_params(const char* args_json, char** result) {
    return guard([&] {
        require(args_json, "args_json");
        const auto j = nlohmann::json::parse(args_json);
        m2a::app::ParamsArgs a;
        a.domains = j.at("domains").get<std::vector<std::size_t>>();
        a.d_in = j.at("d_in").get<std::size_t>();
        a.d_out = j.value("d_out", a.d_in);
        a.rank = j.at("rank").get<std::size_t>();
        a.krona_factor = j.value("krona_factor", std::size_t{0});
        put(result, m2a::app::cmd_params(a).dump());
    });
}

m2a_status m2a_model_load(const char* checkpoint, m2a_model** out) {
    return guard([&] {
        require(checkpoint, "checkpoint");
        require(out, "out");
        auto m = std::make_unique<m2a_model>();
        m->model = m2a::io::model_from_checkpoint(m2a::io::load_checkpoint(checkpoint));
        *out = m.release();
    });
}

void m2a_model_free(m2a_model* model) { delete model; }

m2a_status m2a_model_num_classes(const m2a_model* model, size_t* out) {
    return guard([&] {
        require(model, "model");
        require(out, "out");
        *out = model->model->config().num_classes;
    });
}

m2a_status m2a_model_predict(const m2a_model* model, const int32_t* tokens, size_t n_tokens, const int32_t* domains,
                             size_t n_domains, const char* strategy, uint64_t seed, double* probs, int* fallbacks) {
    return guard([&] {
        require(model, "model");
        require(tokens, "tokens");
        require(probs, "probs");
        if (n_domains > 0) require(domains, "domains");
        m2a::data::Sample x;
        x.tokens.assign(tokens, tokens + n_tokens);
        x.domains.assign(domains, domains + n_domains);
        m2a::eval::PredictOptions po;
        if (strategy != nullptr) po.mode = m2a::adapters::parse_strategy(strategy);
        po.seed = seed;
        int fb = 0;
        const auto logits = m2a::eval::fused_logits(*model->model, {x}, po, &fb);
        const auto p = m2a::num::softmax_rows(logits);
        for (std::size_t c = 0; c < p.cols(); ++c) probs[c] = p.at(0, c);
        if (fallbacks != nullptr) *fallbacks = fb;
    });
}

}  // extern "C"
