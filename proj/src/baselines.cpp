#include "gradcf/baselines.hpp"

#include "gradcf/error.hpp"

namespace gradcf::baselines {

explain::LossEval wachter_loss_eval(const net::NetworkModel& model,
                                    std::span<const double> x_prime, std::span<const double> x,
                                    std::size_t target, double lambda) {
  if (target >= model.class_count()) {
    throw RangeError("target class " + std::to_string(target) + " outside [0, " +
                     std::to_string(model.class_count()) + ")");
  }
  const net::ForwardTrace trace = net::forward_trace(model, x_prime);
  const std::vector<double> probs = net::softmax(trace.logits());
  std::vector<double> logit_grad = net::softmax_gradient(probs, target);
  for (double& g : logit_grad) g = -g;

  explain::LossEval eval;
  eval.target_prob = probs[target];
  eval.logit_term = -probs[target];
  eval.gradient = net::backprop_to_input(model, trace, logit_grad);
  eval.proximity_term = explain::proximity_penalty(x_prime, x, lambda, eval.gradient);
  eval.value = eval.logit_term + eval.proximity_term;
  return eval;
}

double wachter_loss(const net::NetworkModel& model, std::span<const double> x_prime,
                    std::span<const double> x, std::size_t target, double lambda) {
  if (target >= model.class_count()) {
    throw RangeError("target class " + std::to_string(target) + " outside [0, " +
                     std::to_string(model.class_count()) + ")");
  }
  const double p = net::softmax(net::forward(model, x_prime))[target];
  return -p + explain::proximity_penalty(x_prime, x, lambda);
}

double ablation_loss(const net::NetworkModel& model, const FeatureVector& x,
                     const explain::BinaryMask& mask, std::span<const double> composite,
                     std::size_t target, double lambda) {
  if (mask.count() == 0) throw ValidationError("ablation loss needs a non-empty mask");
  const FeatureVector x_prime = explain::compose(x, mask, composite);
  return wachter_loss(model, x_prime.span(), x.span(), target, lambda);
}

explain::ExplainSession run_baseline(const net::NetworkModel& model, const FeatureVector& x,
                                     std::size_t target, const data::ReferenceLogitStats& ref,
                                     const explain::ExplainConfig& config) {
  if (config.objective == explain::Objective::gradual) {
    throw RangeError("run_baseline expects the wachter or ablation objective");
  }
  return explain::run(model, x, target, ref, config);
}

}  // namespace gradcf::baselines
