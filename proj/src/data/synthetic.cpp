// SPDX-License-Identifier: Apache-2.0
#include "data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "common/error.hpp"
#include "common/fs.hpp"
#include "common/random.hpp"

namespace m2a::data {

namespace {

struct Vocabulary {
    int sentiment_base = 0;
    int domain_base = 0;
    int filler_base = 0;
    int size = 0;
    std::vector<int> domain_offset;  // first domain-word id per attribute
};

Vocabulary layout(const SyntheticConfig& c) {
    Vocabulary v;
    v.sentiment_base = kFirstWordId;
    v.domain_base = v.sentiment_base + static_cast<int>(c.num_classes * c.words_per_class);
    int next = v.domain_base;
    for (const auto& a : c.attributes) {
        v.domain_offset.push_back(next);
        next += static_cast<int>(a.num_domains * c.words_per_domain);
    }
    v.filler_base = next;
    v.size = static_cast<int>(resolved_vocab_size(c));
    return v;
}

bool in_unit(double x) { return x >= 0.0 && x <= 1.0; }

}  // namespace

void validate(const SyntheticConfig& c) {
    if (c.attributes.empty()) throw InvalidArgument("synthetic config needs at least one attribute");
    for (const auto& a : c.attributes)
        if (a.num_domains == 0) throw InvalidArgument("attribute '" + a.name + "' needs at least one domain");
    if (!in_unit(c.vocab_skew) || !in_unit(c.label_bias)) {
        throw InvalidArgument("vocab_skew and label_bias must lie in [0, 1]");
    }
    if (c.num_classes < 2) throw InvalidArgument("synthetic config needs at least two classes");
    if (c.samples_per_domain == 0) throw InvalidArgument("infeasible synthetic config: zero samples per domain");
    if (c.seq_len == 0) throw InvalidArgument("sequence length must be positive");
    if (!in_unit(c.dev_fraction) || !in_unit(c.test_fraction) || c.dev_fraction + c.test_fraction >= 1.0) {
        throw InvalidArgument("dev and test fractions must leave room for training data");
    }
    if (!in_unit(c.sentiment_rate) || !in_unit(c.sentiment_purity) || !in_unit(c.domain_rate) ||
        c.sentiment_rate + c.domain_rate > 1.0) {
        throw InvalidArgument("token mixture rates must lie in [0, 1] and sum to at most 1");
    }
    if (c.words_per_class == 0 || c.words_per_domain == 0) throw InvalidArgument("word groups must be non-empty");
    if (c.max_label_offset < 1) throw InvalidArgument("max_label_offset must be at least 1");
    std::size_t needed = static_cast<std::size_t>(kFirstWordId) + c.num_classes * c.words_per_class + 1;
    for (const auto& a : c.attributes) needed += a.num_domains * c.words_per_domain;
    if (c.vocab_size != 0 && c.vocab_size < needed) {
        throw InvalidArgument("vocab_size " + std::to_string(c.vocab_size) + " below the required " +
                              std::to_string(needed));
    }
}

std::size_t resolved_vocab_size(const SyntheticConfig& c) {
    if (c.vocab_size != 0) return c.vocab_size;
    std::size_t n = static_cast<std::size_t>(kFirstWordId) + c.num_classes * c.words_per_class + 32;
    for (const auto& a : c.attributes) n += a.num_domains * c.words_per_domain;
    return n;
}

SyntheticSplits generate_synthetic(const SyntheticConfig& c) {
    validate(c);
    const Vocabulary vocab = layout(c);
    const auto n_attr = c.attributes.size();
    const int n_classes = static_cast<int>(c.num_classes);
    Rng rng(c.seed);

    Schema schema;
    schema.attributes = c.attributes;
    schema.num_classes = c.num_classes;
    schema.vocab_size = static_cast<std::size_t>(vocab.size);

    SyntheticSplits out;
    out.truth.offsets.resize(n_attr);
    for (std::size_t a = 0; a < n_attr; ++a) {
        for (std::size_t d = 0; d < c.attributes[a].num_domains; ++d) {
            int off = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.max_label_offset)));
            if (rng.bernoulli(0.5)) off = -off;
            out.truth.offsets[a].push_back(off);
        }
    }

    std::size_t max_domains = 0;
    for (const auto& a : c.attributes) max_domains = std::max(max_domains, a.num_domains);

    // Balanced, shuffled domain assignment per attribute.
    auto assign_domains = [&](std::size_t n) {
        std::vector<std::vector<int>> per_attr(n_attr);
        for (std::size_t a = 0; a < n_attr; ++a) {
            auto& v = per_attr[a];
            for (std::size_t i = 0; i < n; ++i) v.push_back(static_cast<int>(i % c.attributes[a].num_domains));
            rng.shuffle(v);
        }
        return per_attr;
    };

    auto make_sample = [&](const std::vector<int>& domains, int& base_label) {
        Sample x;
        x.domains = domains;
        base_label = static_cast<int>(rng.below(c.num_classes));
        const double skewed = c.domain_rate * c.vocab_skew;
        const int fillers = vocab.size - vocab.filler_base;
        for (std::size_t t = 0; t < c.seq_len; ++t) {
            const double u = rng.uniform();
            int word;
            if (u < c.sentiment_rate) {
                int cls = base_label;
                if (!rng.bernoulli(c.sentiment_purity)) {
                    cls += rng.bernoulli(0.5) ? 1 : -1;
                    cls = std::clamp(cls, 0, n_classes - 1);
                }
                word = vocab.sentiment_base + cls * static_cast<int>(c.words_per_class) +
                       static_cast<int>(rng.below(c.words_per_class));
            } else if (u < c.sentiment_rate + skewed) {
                const auto a = rng.below(n_attr);
                word = vocab.domain_offset[a] + domains[a] * static_cast<int>(c.words_per_domain) +
                       static_cast<int>(rng.below(c.words_per_domain));
            } else {
                word = vocab.filler_base + static_cast<int>(rng.below(static_cast<std::uint64_t>(fillers)));
            }
            x.tokens.push_back(word);
        }
        int label = base_label;
        for (std::size_t a = 0; a < n_attr; ++a)
            if (rng.bernoulli(c.label_bias)) label += out.truth.offsets[a][static_cast<std::size_t>(domains[a])];
        x.label = std::clamp(label, 0, n_classes - 1);
        return x;
    };

    const std::size_t n = c.samples_per_domain * max_domains;
    const auto assigned = assign_domains(n);
    std::vector<Sample> samples;
    std::vector<int> bases;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<int> domains(n_attr);
        for (std::size_t a = 0; a < n_attr; ++a) domains[a] = assigned[a][i];
        int base = 0;
        samples.push_back(make_sample(domains, base));
        bases.push_back(base);
    }

    // Split: a sample that brings an uncovered (attribute, domain) pair goes
    // to train; the rest fill test and dev quotas first.
    const auto n_test = static_cast<std::size_t>(std::floor(c.test_fraction * static_cast<double>(n)));
    const auto n_dev = static_cast<std::size_t>(std::floor(c.dev_fraction * static_cast<double>(n)));
    std::vector<std::vector<bool>> covered(n_attr);
    for (std::size_t a = 0; a < n_attr; ++a) covered[a].assign(c.attributes[a].num_domains, false);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::size_t test_left = n_test, dev_left = n_dev;
    for (std::size_t i : order) {
        bool new_domain = false;
        for (std::size_t a = 0; a < n_attr; ++a)
            if (!covered[a][static_cast<std::size_t>(samples[i].domains[a])]) new_domain = true;
        if (new_domain) {
            for (std::size_t a = 0; a < n_attr; ++a) covered[a][static_cast<std::size_t>(samples[i].domains[a])] = true;
            out.train.samples.push_back(samples[i]);
            out.truth.train_base.push_back(bases[i]);
        } else if (test_left > 0) {
            --test_left;
            out.test.samples.push_back(samples[i]);
            out.truth.test_base.push_back(bases[i]);
        } else if (dev_left > 0) {
            --dev_left;
            out.dev.samples.push_back(samples[i]);
            out.truth.dev_base.push_back(bases[i]);
        } else {
            out.train.samples.push_back(samples[i]);
            out.truth.train_base.push_back(bases[i]);
        }
    }

    if (c.unlabeled_per_domain > 0) {
        const std::size_t m = c.unlabeled_per_domain * max_domains;
        const auto extra = assign_domains(m);
        for (std::size_t i = 0; i < m; ++i) {
            std::vector<int> domains(n_attr);
            for (std::size_t a = 0; a < n_attr; ++a) domains[a] = extra[a][i];
            int base = 0;
            Sample x = make_sample(domains, base);
            x.label.reset();
            out.unlabeled.samples.push_back(std::move(x));
        }
    }

    for (Dataset* ds : {&out.train, &out.dev, &out.test, &out.unlabeled}) ds->schema = schema;
    return out;
}

void write_splits(const SyntheticSplits& splits, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    save_dataset(splits.train, dir / "train.jsonl");
    save_dataset(splits.dev, dir / "dev.jsonl");
    save_dataset(splits.test, dir / "test.jsonl");
    if (!splits.unlabeled.samples.empty()) save_dataset(splits.unlabeled, dir / "unlabeled.jsonl");
    write_file_atomic(dir / "schema.json", schema_json(splits.train.schema));
}

}  // namespace m2a::data
