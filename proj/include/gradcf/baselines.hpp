#pragma once

// Comparison objectives that share the masking scaffold, optimizer and
// stopping rule with gradual construction and only swap the inner loss.

#include <cstddef>
#include <span>

#include "gradcf/gradual.hpp"

namespace gradcf::baselines {

// Probability maximization with an L2 proximity penalty, in minimization
// form: -softmax(f(X'))[c_t] + lambda ||X' - X||_2.
double wachter_loss(const net::NetworkModel& model, std::span<const double> x_prime,
                    std::span<const double> x, std::size_t target, double lambda);
explain::LossEval wachter_loss_eval(const net::NetworkModel& model,
                                    std::span<const double> x_prime, std::span<const double> x,
                                    std::size_t target, double lambda);

// The same loss written over the composite: X' = (1 - M) o X + M o C.
double ablation_loss(const net::NetworkModel& model, const FeatureVector& x,
                     const explain::BinaryMask& mask, std::span<const double> composite,
                     std::size_t target, double lambda);

// explain::run with objective wachter or ablation. Throws RangeError for the
// gradual objective.
explain::ExplainSession run_baseline(const net::NetworkModel& model, const FeatureVector& x,
                                     std::size_t target, const data::ReferenceLogitStats& ref,
                                     const explain::ExplainConfig& config);

}  // namespace gradcf::baselines
