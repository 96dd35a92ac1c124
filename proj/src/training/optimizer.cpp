// SPDX-License-Identifier: Apache-2.0
#include "training/optimizer.hpp"

#include <cmath>

#include "common/error.hpp"

namespace m2a::training {

namespace {

bool participates(const num::Parameter& p) { return p.trainable && p.has_grad; }

}  // namespace

double global_grad_norm(std::span<const num::ParamPtr> params) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!participates(*p)) continue;
        for (double g : p->grad.values()) sq += g * g;
    }
    return std::sqrt(sq);
}

AdamW::AdamW(std::vector<num::ParamPtr> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    if (!(config_.learning_rate >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
    if (config_.beta1 < 0.0 || config_.beta1 >= 1.0 || config_.beta2 < 0.0 || config_.beta2 >= 1.0) {
        throw InvalidArgument("adam betas must lie in [0, 1)");
    }
    if (!(config_.eps > 0.0)) throw InvalidArgument("adam eps must be positive");
}

double AdamW::step() {
    for (const auto& p : params_) {
        if (!participates(*p)) continue;
        for (double g : p->grad.values())
            if (!std::isfinite(g)) throw NumericError("non-finite gradient in parameter '" + p->name + "'");
    }
    const double norm = global_grad_norm(params_);
    double clip = 1.0;
    if (config_.clip_norm > 0.0 && norm > config_.clip_norm) clip = config_.clip_norm / norm;

    const double b1 = config_.beta1, b2 = config_.beta2, lr = config_.learning_rate;
    for (const auto& p : params_) {
        if (!participates(*p)) continue;
        auto [it, fresh] = state_.try_emplace(p.get());
        Moments& s = it->second;
        if (fresh) {
            s.m = num::Tensor::zeros(p->value.shape());
            s.v = num::Tensor::zeros(p->value.shape());
        }
        ++s.t;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.t));
        auto w = p->value.data();
        auto m = s.m.data();
        auto v = s.v.data();
        const auto g = p->grad.values();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + config_.weight_decay * w[i]);
        }
    }
    return norm;
}

void AdamW::zero_grad() {
    for (const auto& p : params_) p->zero_grad();
}

}  // namespace m2a::training
