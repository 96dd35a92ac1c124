// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <unordered_map>
#include <vector>

#include "numerics/autograd.hpp"

namespace m2a::training {

struct AdamWConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.01;
    /// Global-norm clip threshold; <= 0 disables clipping.
    double clip_norm = 2.0;
};

/// L2 norm over the gradients of trainable parameters that received one.
double global_grad_norm(std::span<const num::ParamPtr> params);

/// Adam with decoupled weight decay and clip-by-global-norm.
///
/// Only trainable parameters with `has_grad` set take part in a step;
/// moment estimates and step counts are kept per parameter.
class AdamW {
public:
    AdamW(std::vector<num::ParamPtr> params, AdamWConfig config);

    const AdamWConfig& config() const { return config_; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }

    /// Clips, updates and returns the pre-clip global norm. Throws
    /// NumericError naming the first parameter with a non-finite gradient.
    double step();
    void zero_grad();

    const std::vector<num::ParamPtr>& parameters() const { return params_; }

private:
    struct Moments {
        num::Tensor m;
        num::Tensor v;
        std::size_t t = 0;
    };

    std::vector<num::ParamPtr> params_;
    AdamWConfig config_;
    std::unordered_map<const num::Parameter*, Moments> state_;
};

}  // namespace m2a::training
