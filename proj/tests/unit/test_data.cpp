// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include "common/error.hpp"
#include "data/dataset.hpp"
#include "data/synthetic.hpp"

using namespace m2a;
using namespace m2a::data;

namespace {

Dataset tiny() {
    Dataset ds;
    ds.schema = Schema{{{"user", 2}, {"item", 3}}, 3, 20};
    ds.samples = {{{5, 6, 7}, 1, {0, 2}}, {{8}, std::nullopt, {1, 0}}, {{4, 19}, 2, {1, 1}}};
    return ds;
}

std::string header() { return dump_dataset(Dataset{tiny().schema, {}}); }

void expect_data_error(const std::string& text, const std::string& fragment) {
    try {
        parse_dataset(text);
        FAIL("expected DataError containing " << fragment);
    } catch (const DataError& e) {
        CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
}

}  // namespace

TEST_CASE("jsonl round trip preserves every field") {
    const Dataset ds = tiny();
    const Dataset back = parse_dataset(dump_dataset(ds));
    CHECK(back == ds);

    const auto dir = std::filesystem::temp_directory_path() / "m2a_test_data";
    std::filesystem::create_directories(dir);
    save_dataset(ds, dir / "d.jsonl");
    CHECK(load_dataset(dir / "d.jsonl") == ds);
    CHECK(parse_schema_json(schema_json(ds.schema)) == ds.schema);
    std::filesystem::remove_all(dir);
}

TEST_CASE("parse errors name the line and the field") {
    const std::string h = header();
    expect_data_error("", "field 'schema'");
    expect_data_error(h + "{\"tokens\":[5],\"label\":1}\n", "line 2: field 'attrs' missing");
    expect_data_error(h + "{\"tokens\":[],\"label\":1,\"attrs\":{\"user\":0,\"item\":0}}\n", "line 2: field 'tokens'");
    expect_data_error(h + "\n{\"tokens\":[5],\"label\":7,\"attrs\":{\"user\":0,\"item\":0}}\n",
                      "line 3: field 'label'");
    expect_data_error(h + "{\"tokens\":[99],\"label\":1,\"attrs\":{\"user\":0,\"item\":0}}\n", "outside vocabulary");
    expect_data_error(h + "{\"tokens\":[5],\"label\":1,\"attrs\":{\"user\":0,\"color\":0}}\n", "attrs.color");
    expect_data_error(h + "{\"tokens\":[5],\"label\":1,\"attrs\":{\"user\":-1,\"item\":0}}\n", "attrs.user");
    expect_data_error(h + "{not json\n", "line 2: invalid JSON");
    expect_data_error("{\"schema\":{\"attributes\":[],\"num_classes\":2,\"vocab_size\":9}}\n", "attributes");
    CHECK_THROWS_AS(load_dataset("/nonexistent/m2a.jsonl"), IoError);
}

TEST_CASE("partitions and domain buckets") {
    Dataset ds = tiny();
    CHECK(partition(ds.samples[0], ds.schema, "item") == 2);
    CHECK_THROWS_AS(partition(ds.samples[0], ds.schema, "color"), InvalidArgument);
    const auto by_user = split_by_domain(ds, 0);
    REQUIRE(by_user.size() == 2);
    CHECK(by_user[0] == std::vector<std::size_t>{0});
    CHECK(by_user[1] == std::vector<std::size_t>{1, 2});
    ds.samples.push_back({{5}, 0, {4, 0}});
    CHECK(split_by_domain(ds, 0).size() == 5);

    CHECK_NOTHROW(validate(tiny()));
    ds = tiny();
    ds.samples[0].domains.pop_back();
    CHECK_THROWS_AS(validate(ds), DataError);
}

TEST_CASE("masking hits the requested rate and never touches the protected prefix") {
    std::vector<int> toks(101);
    for (std::size_t i = 0; i < toks.size(); ++i) toks[i] = 4 + static_cast<int>(i % 10);
    MaskOptions opt;
    opt.protected_prefix = 1;
    std::size_t masked = 0, eligible = 0;
    for (std::uint64_t s = 0; s < 1000; ++s) {
        const auto m = mask_tokens(toks, 0.15, s, opt);
        CHECK(m.positions.size() == 15);
        CHECK(std::is_sorted(m.positions.begin(), m.positions.end()));
        CHECK(m.positions.front() >= 1);
        for (std::size_t k = 0; k < m.positions.size(); ++k) {
            CHECK(m.tokens[static_cast<std::size_t>(m.positions[k])] == kMaskId);
            CHECK(m.originals[k] == toks[static_cast<std::size_t>(m.positions[k])]);
        }
        masked += m.positions.size();
        eligible += toks.size() - 1;
    }
    CHECK(static_cast<double>(masked) / static_cast<double>(eligible) == doctest::Approx(0.15).epsilon(0.01));
    CHECK(mask_tokens(toks, 0.15, 7, opt).positions == mask_tokens(toks, 0.15, 7, opt).positions);
    CHECK_THROWS_AS(mask_tokens(toks, 0.0, 1), InvalidArgument);
    CHECK_THROWS_AS(mask_tokens(std::vector<int>{}, 0.5, 1), InvalidArgument);
}

TEST_CASE("bert-style masking splits 80/10/10") {
    std::vector<int> toks(200, 9);
    MaskOptions opt;
    opt.bert_style = true;
    opt.vocab_size = 50;
    std::size_t mask = 0, kept = 0, other = 0;
    for (std::uint64_t s = 0; s < 300; ++s) {
        const auto m = mask_tokens(toks, 0.5, s, opt);
        for (int p : m.positions) {
            const int t = m.tokens[static_cast<std::size_t>(p)];
            if (t == kMaskId)
                ++mask;
            else if (t == 9)
                ++kept;
            else
                ++other;
            CHECK(t < 50);
        }
    }
    const double n = static_cast<double>(mask + kept + other);
    CHECK(mask / n == doctest::Approx(0.8).epsilon(0.03));
    // random replacements land on the original word 1 time in 46
    CHECK((kept + other) / n == doctest::Approx(0.2).epsilon(0.1));
}

TEST_CASE("synthetic labels replay from the generator truth") {
    SyntheticConfig c;
    c.label_bias = 1.0;
    c.samples_per_domain = 30;
    const auto s = generate_synthetic(c);
    auto replay = [&](const Dataset& ds, const std::vector<int>& base) {
        REQUIRE(ds.samples.size() == base.size());
        for (std::size_t i = 0; i < ds.samples.size(); ++i) {
            int label = base[i];
            for (std::size_t a = 0; a < 2; ++a)
                label += s.truth.offsets[a][static_cast<std::size_t>(ds.samples[i].domains[a])];
            label = std::clamp(label, 0, static_cast<int>(c.num_classes) - 1);
            CHECK(*ds.samples[i].label == label);
        }
    };
    replay(s.train, s.truth.train_base);
    replay(s.dev, s.truth.dev_base);
    replay(s.test, s.truth.test_base);

    c.label_bias = 0.0;
    const auto flat = generate_synthetic(c);
    for (std::size_t i = 0; i < flat.test.samples.size(); ++i)
        CHECK(*flat.test.samples[i].label == flat.truth.test_base[i]);
}

TEST_CASE("synthetic splits are deterministic, valid and cover every domain in train") {
    SyntheticConfig c;
    c.unlabeled_per_domain = 5;
    const auto a = generate_synthetic(c);
    const auto b = generate_synthetic(c);
    CHECK(a.train == b.train);
    CHECK(a.test == b.test);
    c.seed = 2;
    CHECK_FALSE(generate_synthetic(c).train == a.train);

    const std::size_t total = a.train.samples.size() + a.dev.samples.size() + a.test.samples.size();
    CHECK(total == 40 * 8);
    CHECK(a.test.samples.size() == 80);
    CHECK(a.dev.samples.size() == 48);
    CHECK(a.unlabeled.samples.size() == 40);
    for (const auto& x : a.unlabeled.samples) CHECK_FALSE(x.label.has_value());
    for (const Dataset* ds : {&a.train, &a.dev, &a.test, &a.unlabeled}) CHECK_NOTHROW(validate(*ds));
    for (std::size_t attr = 0; attr < 2; ++attr)
        for (const auto& bucket : split_by_domain(a.train, attr)) CHECK_FALSE(bucket.empty());
    CHECK(a.train.schema.vocab_size == resolved_vocab_size(c));
}

TEST_CASE("synthetic config validation") {
    SyntheticConfig c;
    c.samples_per_domain = 0;
    CHECK_THROWS_AS(generate_synthetic(c), InvalidArgument);
    c = {};
    c.label_bias = 1.5;
    CHECK_THROWS_AS(validate(c), InvalidArgument);
    c = {};
    c.vocab_size = 10;
    CHECK_THROWS_AS(validate(c), InvalidArgument);
    c = {};
    c.dev_fraction = 0.6;
    c.test_fraction = 0.5;
    CHECK_THROWS_AS(validate(c), InvalidArgument);
}

TEST_CASE("write_splits lays out the dataset directory") {
    SyntheticConfig c;
    c.samples_per_domain = 10;
    const auto s = generate_synthetic(c);
    const auto dir = std::filesystem::temp_directory_path() / "m2a_test_splits";
    std::filesystem::remove_all(dir);
    write_splits(s, dir);
    for (const char* f : {"train.jsonl", "dev.jsonl", "test.jsonl", "schema.json"})
        CHECK(std::filesystem::exists(dir / f));
    CHECK_FALSE(std::filesystem::exists(dir / "unlabeled.jsonl"));
    CHECK(load_dataset(dir / "test.jsonl") == s.test);
    std::filesystem::remove_all(dir);
}
