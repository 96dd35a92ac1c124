// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "data/dataset.hpp"

namespace m2a::data {

/// Knobs for the synthetic multi-attribute corpus.
///
/// Each sample draws a base label uniformly; its tokens mix sentiment words
/// tied to that base label, words preferred by its domains (rate scaled by
/// `vocab_skew`) and neutral filler. Every domain owns an integer label
/// offset sampled once; each attribute's offset is applied with probability
/// `label_bias`, and the sum is clamped to the class range.
struct SyntheticConfig {
    std::vector<Attribute> attributes{{"user", 8}, {"item", 8}};
    double vocab_skew = 0.5;
    double label_bias = 0.7;
    std::size_t num_classes = 5;
    /// Labeled samples generated = samples_per_domain × max domain count.
    std::size_t samples_per_domain = 40;
    std::size_t unlabeled_per_domain = 0;
    std::size_t seq_len = 16;
    /// 0 = smallest vocabulary holding every word group plus 32 fillers.
    std::size_t vocab_size = 0;
    double dev_fraction = 0.15;
    double test_fraction = 0.25;
    /// Share of positions carrying a sentiment word.
    double sentiment_rate = 0.3;
    /// Probability that a sentiment word comes from the base label's group.
    double sentiment_purity = 0.8;
    /// Share of positions carrying a domain word when vocab_skew = 1.
    double domain_rate = 0.5;
    std::size_t words_per_class = 4;
    std::size_t words_per_domain = 3;
    int max_label_offset = 1;
    std::uint64_t seed = 1;
};

void validate(const SyntheticConfig& config);
std::size_t resolved_vocab_size(const SyntheticConfig& config);

/// Generator internals exposed for replay checks.
struct SyntheticTruth {
    /// offsets[a][d]: label offset of domain d under attribute a.
    std::vector<std::vector<int>> offsets;
    /// Base labels aligned with each split's samples.
    std::vector<int> train_base, dev_base, test_base;
};

struct SyntheticSplits {
    Dataset train, dev, test, unlabeled;
    SyntheticTruth truth;
};

SyntheticSplits generate_synthetic(const SyntheticConfig& config);

/// Writes train/dev/test.jsonl, schema.json and, when present,
/// unlabeled.jsonl into `dir`.
void write_splits(const SyntheticSplits& splits, const std::filesystem::path& dir);

}  // namespace m2a::data
