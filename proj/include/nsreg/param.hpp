#pragma once

#include "nsreg/types.hpp"

#include <cmath>
#include <random>
#include <string>

namespace nsreg {

/// One named trainable tensor with its gradient and Adam moments.
struct ParamGroup {
    std::string name;
    Matrix value;
    Matrix grad;
    Matrix adam_m;
    Matrix adam_v;
    std::uint64_t step_count = 0;

    ParamGroup() = default;
    ParamGroup(std::string n, Eigen::Index rows, Eigen::Index cols)
        : name(std::move(n)),
          value(Matrix::Zero(rows, cols)),
          grad(Matrix::Zero(rows, cols)),
          adam_m(Matrix::Zero(rows, cols)),
          adam_v(Matrix::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(); }
};

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Glorot-uniform initialisation; biases should stay zero (default ctor).
inline void glorot_init(ParamGroup& g, std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(g.value.rows());
    const double fan_out = static_cast<double>(g.value.cols());
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < g.value.rows(); ++i)
        for (Eigen::Index j = 0; j < g.value.cols(); ++j) g.value(i, j) = dist(rng);
}

/// Bias-corrected Adam update; zeroes the gradient and bumps step_count.
inline void adam_step(ParamGroup& g, const AdamConfig& cfg) {
    if (!g.grad.allFinite()) {
        throw NumericError("adam_step: non-finite gradient in group '" + g.name + "'");
    }
    g.step_count += 1;
    const double t = static_cast<double>(g.step_count);
    g.adam_m = cfg.beta1 * g.adam_m + (1.0 - cfg.beta1) * g.grad;
    g.adam_v = cfg.beta2 * g.adam_v.array().matrix() +
               (1.0 - cfg.beta2) * g.grad.array().square().matrix();
    const double bc1 = 1.0 - std::pow(cfg.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t);
    const Matrix m_hat = g.adam_m / bc1;
    const Matrix v_hat = g.adam_v / bc2;
    g.value.array() -=
        cfg.learning_rate * m_hat.array() / (v_hat.array().sqrt() + cfg.epsilon);
    g.zero_grad();
}

}  // namespace nsreg
