// SPDX-License-Identifier: Apache-2.0
// Small models and datasets for tests.
#pragma once

#include <memory>

#include "data/synthetic.hpp"
#include "model/model.hpp"

namespace m2a::testing {

inline data::SyntheticConfig tiny_synthetic(std::uint64_t seed = 1) {
    data::SyntheticConfig c;
    c.attributes = {{"user", 3}, {"item", 2}};
    c.samples_per_domain = 12;
    c.seq_len = 6;
    c.seed = seed;
    return c;
}

inline model::BackboneConfig tiny_backbone(const data::Schema& schema, std::uint64_t seed = 3) {
    model::BackboneConfig b;
    b.num_layers = 1;
    b.d_model = 8;
    b.num_heads = 2;
    b.d_ff = 8;
    b.vocab_size = schema.vocab_size;
    b.num_classes = schema.num_classes;
    b.max_seq_len = 16;
    b.seed = seed;
    return b;
}

inline std::unique_ptr<model::Model> tiny_model(const data::Schema& schema, std::uint64_t seed = 3) {
    return std::make_unique<model::Model>(tiny_backbone(schema, seed), model::bank_config_for(schema, 2, seed + 1));
}

}  // namespace m2a::testing
