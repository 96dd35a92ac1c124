// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace m2a::data {

// Reserved token ids; ordinary words start at kFirstWordId.
inline constexpr int kPadId = 0;
inline constexpr int kClsId = 1;  // [CLS] in MLM mode, BOS in ARM mode
inline constexpr int kMaskId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kFirstWordId = 4;

struct Attribute {
    std::string name;
    std::size_t num_domains = 0;

    bool operator==(const Attribute&) const = default;
};

/// Attributes (each inducing a partition of the data), label space and
/// vocabulary size. Domain ids of attribute a are dense in [0, num_domains).
struct Schema {
    std::vector<Attribute> attributes;
    std::size_t num_classes = 0;
    std::size_t vocab_size = 0;

    std::optional<std::size_t> attribute_index(const std::string& name) const;
    bool operator==(const Schema&) const = default;
};

struct Sample {
    std::vector<int> tokens;
    /// Task label; empty for unlabeled samples.
    std::optional<int> label;
    /// Domain id per schema attribute, in schema order.
    std::vector<int> domains;

    bool operator==(const Sample&) const = default;
};

struct Dataset {
    Schema schema;
    std::vector<Sample> samples;

    bool operator==(const Dataset&) const = default;
};

/// Domain of `sample` under `attribute`. Throws InvalidArgument for an
/// attribute not in the schema.
int partition(const Sample& sample, const Schema& schema, const std::string& attribute);

/// Sample indices per domain of `attribute`; every sample lands in exactly
/// one bucket. Ids beyond the schema count get their own trailing buckets.
std::vector<std::vector<std::size_t>> split_by_domain(const Dataset& dataset, std::size_t attribute);

struct MaskOptions {
    int mask_id = kMaskId;
    /// Leading positions never masked (the classification anchor).
    std::size_t protected_prefix = 0;
    /// BERT 80/10/10 replacement instead of pure [MASK].
    bool bert_style = false;
    /// Needed for bert_style random replacement.
    std::size_t vocab_size = 0;
};

struct MaskResult {
    std::vector<int> tokens;
    /// Masked positions, ascending.
    std::vector<int> positions;
    /// Original token at each masked position.
    std::vector<int> originals;
};

/// Replaces round(ratio · n) of the n eligible positions. ratio must be in
/// (0, 1] and the sequence non-empty.
MaskResult mask_tokens(std::span<const int> tokens, double ratio, std::uint64_t seed, const MaskOptions& options = {});

/// Checks domain ids, label range and token range against the schema.
void validate(const Dataset& dataset);

/// Line-delimited JSON: a header record carrying the schema, then one
/// record per sample with `tokens`, `label` (int or null) and `attrs`.
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);
std::string dump_dataset(const Dataset& dataset);
Dataset parse_dataset(const std::string& text);

std::string schema_json(const Schema& schema);
Schema parse_schema_json(const std::string& text);

}  // namespace m2a::data
