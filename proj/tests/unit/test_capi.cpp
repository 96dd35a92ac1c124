// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "m2a/m2a.h"

using nlohmann::json;

namespace {

std::string take(char* s) {
    REQUIRE(s != nullptr);
    std::string out(s);
    m2a_string_free(s);
    return out;
}

const char* kSmall = R"({
  "backbone": {"num_layers": 1, "d_model": 8, "num_heads": 2, "d_ff": 8},
  "synthetic": {"attributes": [{"name": "user", "domains": 3}, {"name": "item", "domains": 2}],
                "samples_per_domain": 12, "seq_len": 6},
  "pretrain": {"steps": 5, "batch_size": 4},
  "train": {"max_epochs": 1, "separation_max_epochs": 1, "batch_size": 8}
})";

}  // namespace

TEST_CASE("status names and errors") {
    CHECK(std::string(m2a_version()).size() > 0);
    CHECK(std::string(m2a_status_name(M2A_ERR_FACTORIZATION)) == "factorization_error");
    CHECK(std::string(m2a_status_name(static_cast<m2a_status>(1234))) == "internal_error");

    m2a_config* cfg = nullptr;
    CHECK(m2a_config_from_json("{\"bogus\": 1}", &cfg) == M2A_ERR_INVALID_ARGUMENT);
    CHECK(std::string(m2a_last_error()).find("bogus") != std::string::npos);
    CHECK(cfg == nullptr);
    CHECK(m2a_config_from_json("{not json", &cfg) == M2A_ERR_INVALID_ARGUMENT);
    CHECK(m2a_config_default(nullptr) == M2A_ERR_INVALID_ARGUMENT);
    CHECK(m2a_config_default(&cfg) == M2A_OK);
    CHECK(std::string(m2a_last_error()).empty());
    CHECK(m2a_config_load("/nonexistent/config.json", &cfg) != M2A_OK);
    m2a_config_free(cfg);
    m2a_config_free(nullptr);
}

TEST_CASE("config patch and seed") {
    m2a_config* cfg = nullptr;
    REQUIRE(m2a_config_default(&cfg) == M2A_OK);
    CHECK(m2a_config_patch(cfg, R"({"train": {"alpha": 0.0}})") == M2A_OK);
    CHECK(m2a_config_set_seed(cfg, 77) == M2A_OK);
    char* out = nullptr;
    REQUIRE(m2a_config_to_json(cfg, &out) == M2A_OK);
    const json j = json::parse(take(out));
    CHECK(j["train"]["alpha"] == 0.0);
    CHECK(j["seed"] == 77);
    CHECK(m2a_config_patch(cfg, R"({"train": {"alpah": 1}})") == M2A_ERR_INVALID_ARGUMENT);
    m2a_config_free(cfg);
}

TEST_CASE("parameter budgets") {
    char* out = nullptr;
    REQUIRE(m2a_params(R"({"domains":[4,3],"d_in":32,"d_out":32,"rank":8})", &out) == M2A_OK);
    const json j = json::parse(take(out));
    CHECK(j["non_decomposed"] == 5632);
    CHECK(j["decomposed"] == 1312);
    CHECK(j["allocated"]["decomposed"] == 1312);
    CHECK(m2a_params(R"({"domains":[4],"d_in":10,"d_out":10,"rank":2,"krona_factor":3})", &out) ==
          M2A_ERR_FACTORIZATION);
    CHECK(m2a_params(R"({"domains":[4]})", &out) == M2A_ERR_INVALID_ARGUMENT);
}

TEST_CASE("generate, pretrain, train, evaluate and predict") {
    const auto dir = std::filesystem::temp_directory_path() / "m2a_test_capi";
    std::filesystem::remove_all(dir);
    const std::string data = (dir / "data").string(), base = (dir / "base.ckpt").string(),
                      ckpt = (dir / "m.ckpt").string();
    m2a_config* cfg = nullptr;
    REQUIRE(m2a_config_from_json(kSmall, &cfg) == M2A_OK);
    m2a_config_set_seed(cfg, 1);
    char* out = nullptr;
    REQUIRE(m2a_generate(cfg, data.c_str(), &out) == M2A_OK);
    CHECK(json::parse(take(out))["train"].get<int>() > 0);
    REQUIRE(m2a_pretrain(cfg, data.c_str(), base.c_str(), &out) == M2A_OK);
    take(out);
    REQUIRE(m2a_train(cfg, data.c_str(), base.c_str(), ckpt.c_str(), nullptr, &out) == M2A_OK);
    const json tr = json::parse(take(out));
    CHECK(std::filesystem::exists(tr["log"].get<std::string>()));

    char* table = nullptr;
    const std::string report = (dir / "report.json").string();
    REQUIRE(m2a_eval(data.c_str(), "test", ckpt.c_str(), "general", 0, 0, report.c_str(), &out, &table) == M2A_OK);
    const json ev = json::parse(take(out));
    CHECK(ev["strategy"] == "general");
    CHECK(take(table).find("accuracy") != std::string::npos);
    CHECK(std::filesystem::exists(report));
    CHECK(m2a_eval(data.c_str(), "test", ckpt.c_str(), "median", 0, 0, nullptr, &out, nullptr) ==
          M2A_ERR_INVALID_ARGUMENT);
    CHECK(m2a_eval(data.c_str(), "nope", ckpt.c_str(), "fine", 0, 0, nullptr, &out, nullptr) == M2A_ERR_IO);

    m2a_model* model = nullptr;
    REQUIRE(m2a_model_load(ckpt.c_str(), &model) == M2A_OK);
    size_t k = 0;
    REQUIRE(m2a_model_num_classes(model, &k) == M2A_OK);
    CHECK(k == 5);
    const std::vector<int32_t> toks{5, 6, 7};
    const std::vector<int32_t> dom{2, 9};
    std::vector<double> probs(k);
    int fallbacks = -1;
    REQUIRE(m2a_model_predict(model, toks.data(), toks.size(), dom.data(), dom.size(), "fine", 0, probs.data(),
                              &fallbacks) == M2A_OK);
    CHECK(fallbacks == 1);
    double s = 0;
    for (double p : probs) s += p;
    CHECK(s == doctest::Approx(1.0));
    CHECK(m2a_model_predict(model, toks.data(), toks.size(), dom.data(), 1, "fine", 0, probs.data(), nullptr) ==
          M2A_ERR_DATA);
    m2a_model_free(model);

    CHECK(m2a_model_load((dir / "missing.ckpt").string().c_str(), &model) == M2A_ERR_IO);
    m2a_config_free(cfg);
    std::filesystem::remove_all(dir);
}
