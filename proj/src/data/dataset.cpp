// SPDX-License-Identifier: Apache-2.0
#include "data/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "common/error.hpp"
#include "common/fs.hpp"
#include "common/random.hpp"

namespace m2a::data {

using nlohmann::json;

std::optional<std::size_t> Schema::attribute_index(const std::string& name) const {
    for (std::size_t i = 0; i < attributes.size(); ++i)
        if (attributes[i].name == name) return i;
    return std::nullopt;
}

int partition(const Sample& sample, const Schema& schema, const std::string& attribute) {
    const auto idx = schema.attribute_index(attribute);
    if (!idx) throw InvalidArgument("unknown attribute '" + attribute + "'");
    if (*idx >= sample.domains.size()) throw DataError("sample lacks a domain for attribute '" + attribute + "'");
    return sample.domains[*idx];
}

std::vector<std::vector<std::size_t>> split_by_domain(const Dataset& dataset, std::size_t attribute) {
    std::vector<std::vector<std::size_t>> buckets(dataset.schema.attributes.at(attribute).num_domains);
    for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
        const int d = dataset.samples[i].domains.at(attribute);
        if (d < 0) throw DataError("negative domain id in sample " + std::to_string(i));
        if (static_cast<std::size_t>(d) >= buckets.size()) buckets.resize(static_cast<std::size_t>(d) + 1);
        buckets[static_cast<std::size_t>(d)].push_back(i);
    }
    return buckets;
}

MaskResult mask_tokens(std::span<const int> tokens, double ratio, std::uint64_t seed, const MaskOptions& options) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw InvalidArgument("mask ratio must be in (0, 1]");
    if (tokens.empty()) throw InvalidArgument("cannot mask an empty sequence");
    if (options.bert_style && options.vocab_size <= static_cast<std::size_t>(kFirstWordId)) {
        throw InvalidArgument("bert-style masking needs the vocabulary size");
    }
    MaskResult out;
    out.tokens.assign(tokens.begin(), tokens.end());
    const std::size_t first = std::min(options.protected_prefix, tokens.size());
    const std::size_t eligible = tokens.size() - first;
    const auto count = static_cast<std::size_t>(std::lround(ratio * static_cast<double>(eligible)));
    if (count == 0) return out;

    Rng rng(seed);
    std::vector<int> pool(eligible);
    for (std::size_t i = 0; i < eligible; ++i) pool[i] = static_cast<int>(first + i);
    // Partial Fisher-Yates: the first `count` entries become the sample.
    for (std::size_t i = 0; i < count; ++i) std::swap(pool[i], pool[i + rng.below(eligible - i)]);
    out.positions.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(out.positions.begin(), out.positions.end());

    for (int pos : out.positions) {
        const auto p = static_cast<std::size_t>(pos);
        out.originals.push_back(tokens[p]);
        if (!options.bert_style) {
            out.tokens[p] = options.mask_id;
            continue;
        }
        const double u = rng.uniform();
        if (u < 0.8) {
            out.tokens[p] = options.mask_id;
        } else if (u < 0.9) {
            out.tokens[p] = kFirstWordId + static_cast<int>(rng.below(options.vocab_size - kFirstWordId));
        }
    }
    return out;
}

void validate(const Dataset& ds) {
    const auto& s = ds.schema;
    if (s.attributes.empty()) throw DataError("schema has no attributes");
    if (s.num_classes == 0) throw DataError("schema has no classes");
    if (s.vocab_size <= static_cast<std::size_t>(kFirstWordId)) throw DataError("schema vocabulary too small");
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& x = ds.samples[i];
        const std::string where = "sample " + std::to_string(i) + ": ";
        if (x.tokens.empty()) throw DataError(where + "empty token list");
        for (int t : x.tokens)
            if (t < 0 || static_cast<std::size_t>(t) >= s.vocab_size)
                throw DataError(where + "token " + std::to_string(t) + " outside vocabulary");
        if (x.label && (*x.label < 0 || static_cast<std::size_t>(*x.label) >= s.num_classes))
            throw DataError(where + "label " + std::to_string(*x.label) + " outside class range");
        if (x.domains.size() != s.attributes.size()) throw DataError(where + "wrong number of attribute domains");
        for (int d : x.domains)
            if (d < 0) throw DataError(where + "negative domain id");
    }
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

json schema_to_json(const Schema& s) {
    json attrs = json::array();
    for (const auto& a : s.attributes) attrs.push_back({{"name", a.name}, {"domains", a.num_domains}});
    return {{"attributes", attrs}, {"num_classes", s.num_classes}, {"vocab_size", s.vocab_size}};
}

Schema schema_from_json(const json& j, const std::string& where) {
    auto need = [&](const json& obj, const char* key) -> const json& {
        if (!obj.is_object() || !obj.contains(key)) throw DataError(where + "field '" + key + "' missing");
        return obj.at(key);
    };
    Schema s;
    const json& attrs = need(j, "attributes");
    if (!attrs.is_array() || attrs.empty()) throw DataError(where + "field 'attributes' must be a non-empty array");
    for (const auto& a : attrs) {
        const json& name = need(a, "name");
        const json& dom = need(a, "domains");
        if (!name.is_string()) throw DataError(where + "field 'attributes.name' must be a string");
        if (!dom.is_number_unsigned()) throw DataError(where + "field 'attributes.domains' must be a count");
        Attribute attr{name.get<std::string>(), dom.get<std::size_t>()};
        for (const auto& prev : s.attributes)
            if (prev.name == attr.name) throw DataError(where + "duplicate attribute '" + attr.name + "'");
        s.attributes.push_back(std::move(attr));
    }
    const json& nc = need(j, "num_classes");
    const json& vs = need(j, "vocab_size");
    if (!nc.is_number_unsigned()) throw DataError(where + "field 'num_classes' must be a count");
    if (!vs.is_number_unsigned()) throw DataError(where + "field 'vocab_size' must be a count");
    s.num_classes = nc.get<std::size_t>();
    s.vocab_size = vs.get<std::size_t>();
    return s;
}

json sample_to_json(const Sample& x, const Schema& s) {
    json attrs = json::object();
    for (std::size_t a = 0; a < s.attributes.size(); ++a) attrs[s.attributes[a].name] = x.domains.at(a);
    json rec = {{"tokens", x.tokens}, {"attrs", attrs}};
    rec["label"] = x.label ? json(*x.label) : json(nullptr);
    return rec;
}

Sample sample_from_json(const json& j, const Schema& s, const std::string& where) {
    if (!j.is_object()) throw DataError(where + "record must be an object");
    Sample x;
    if (!j.contains("tokens")) throw DataError(where + "field 'tokens' missing");
    const json& toks = j.at("tokens");
    if (!toks.is_array() || toks.empty()) throw DataError(where + "field 'tokens' must be a non-empty array");
    for (const auto& t : toks) {
        if (!t.is_number_integer()) throw DataError(where + "field 'tokens' must hold integers");
        const auto v = t.get<long long>();
        if (v < 0 || static_cast<std::size_t>(v) >= s.vocab_size)
            throw DataError(where + "field 'tokens' has id " + std::to_string(v) + " outside vocabulary");
        x.tokens.push_back(static_cast<int>(v));
    }
    if (!j.contains("label")) throw DataError(where + "field 'label' missing");
    const json& lab = j.at("label");
    if (!lab.is_null()) {
        if (!lab.is_number_integer()) throw DataError(where + "field 'label' must be an integer or null");
        const auto v = lab.get<long long>();
        if (v < 0 || static_cast<std::size_t>(v) >= s.num_classes)
            throw DataError(where + "field 'label' value " + std::to_string(v) + " outside class range");
        x.label = static_cast<int>(v);
    }
    if (!j.contains("attrs")) throw DataError(where + "field 'attrs' missing");
    const json& attrs = j.at("attrs");
    if (!attrs.is_object()) throw DataError(where + "field 'attrs' must be an object");
    for (const auto& [key, _] : attrs.items())
        if (!s.attribute_index(key)) throw DataError(where + "field 'attrs." + key + "' is not in the schema");
    for (const auto& a : s.attributes) {
        if (!attrs.contains(a.name)) throw DataError(where + "field 'attrs." + a.name + "' missing");
        const json& d = attrs.at(a.name);
        if (!d.is_number_integer() || d.get<long long>() < 0)
            throw DataError(where + "field 'attrs." + a.name + "' must be a non-negative integer");
        x.domains.push_back(static_cast<int>(d.get<long long>()));
    }
    return x;
}

}  // namespace

std::string schema_json(const Schema& schema) { return schema_to_json(schema).dump(2) + "\n"; }

Schema parse_schema_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(std::string("schema: ") + e.what());
    }
    return schema_from_json(j, "schema: ");
}

std::string dump_dataset(const Dataset& ds) {
    std::string out = json{{"schema", schema_to_json(ds.schema)}}.dump() + "\n";
    for (const auto& x : ds.samples) out += sample_to_json(x, ds.schema).dump() + "\n";
    return out;
}

Dataset parse_dataset(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    Dataset ds;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string where = "line " + std::to_string(lineno) + ": ";
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw DataError(where + "invalid JSON (" + e.what() + ")");
        }
        if (!have_header) {
            if (!j.is_object() || !j.contains("schema")) throw DataError(where + "field 'schema' missing in header");
            ds.schema = schema_from_json(j.at("schema"), where);
            have_header = true;
            continue;
        }
        ds.samples.push_back(sample_from_json(j, ds.schema, where));
    }
    if (!have_header) throw DataError("line 1: field 'schema' missing in header");
    return ds;
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
    write_file_atomic(path, dump_dataset(dataset));
}

Dataset load_dataset(const std::filesystem::path& path) {
    try {
        return parse_dataset(read_file(path));
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

}  // namespace m2a::data
