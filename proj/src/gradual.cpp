#include "gradcf/gradual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gradcf/baselines.hpp"
#include "gradcf/error.hpp"

namespace gradcf::explain {

using nlohmann::json;

UnitLayout UnitLayout::features(std::size_t d) {
  UnitLayout layout;
  layout.offsets_.resize(d + 1);
  std::iota(layout.offsets_.begin(), layout.offsets_.end(), 0);
  layout.members_.resize(d);
  std::iota(layout.members_.begin(), layout.members_.end(), 0);
  layout.unit_of_ = layout.members_;
  return layout;
}

UnitLayout UnitLayout::blocks(ImageShape shape, BlockSize block) {
  if (block.height == 0 || block.width == 0) throw RangeError("block size must be positive");
  UnitLayout layout;
  layout.block_ = block;
  layout.unit_of_.resize(shape.size());
  layout.offsets_.push_back(0);
  for (std::size_t by = 0; by < shape.height; by += block.height) {
    for (std::size_t bx = 0; bx < shape.width; bx += block.width) {
      const std::size_t unit = layout.offsets_.size() - 1;
      for (std::size_t y = by; y < std::min(shape.height, by + block.height); ++y) {
        for (std::size_t x = bx; x < std::min(shape.width, bx + block.width); ++x) {
          const std::size_t f = y * shape.width + x;
          layout.members_.push_back(f);
          layout.unit_of_[f] = unit;
        }
      }
      layout.offsets_.push_back(layout.members_.size());
    }
  }
  return layout;
}

UnitLayout UnitLayout::for_input(const FeatureVector& x, std::optional<BlockSize> block) {
  if (block && x.image) return blocks(*x.image, *block);
  return features(x.size());
}

std::span<const std::size_t> UnitLayout::members(std::size_t unit) const {
  if (unit >= unit_count()) throw RangeError("unit index out of range");
  return std::span<const std::size_t>(members_).subspan(offsets_[unit],
                                                        offsets_[unit + 1] - offsets_[unit]);
}

std::vector<double> UnitLayout::pool(std::span<const double> feature_scores) const {
  if (feature_scores.size() != feature_count()) {
    throw DimensionError("score vector does not match the unit layout");
  }
  std::vector<double> scores(unit_count(), 0.0);
  for (std::size_t u = 0; u < unit_count(); ++u) {
    for (std::size_t f : members(u)) scores[u] += feature_scores[f];
  }
  return scores;
}

std::size_t BinaryMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

std::string to_string(Objective o) {
  switch (o) {
    case Objective::gradual: return "gradual";
    case Objective::wachter: return "wachter";
    case Objective::ablation: return "ablation";
  }
  return "?";
}

std::string to_string(Scope s) { return s == Scope::masked ? "masked" : "full"; }
std::string to_string(RankMode r) { return r == RankMode::fixed ? "static" : "recompute"; }
std::string to_string(LogitNorm n) { return n == LogitNorm::vector ? "vector" : "scalar_sum"; }
std::string to_string(Outcome o) { return o == Outcome::success ? "success" : "budget_exhausted"; }

Objective parse_objective(const std::string& s) {
  if (s == "gradual") return Objective::gradual;
  if (s == "wachter") return Objective::wachter;
  if (s == "ablation") return Objective::ablation;
  throw RangeError("unknown objective '" + s + "'");
}

RankMode parse_rank_mode(const std::string& s) {
  if (s == "static") return RankMode::fixed;
  if (s == "recompute") return RankMode::recompute;
  throw RangeError("unknown rank mode '" + s + "'");
}

ExplainConfig ExplainConfig::tabular() { return {}; }

ExplainConfig ExplainConfig::image() {
  ExplainConfig c;
  c.tau = 0.9;
  c.sigma = 1000;
  c.eta = 0.3;
  c.beta = 2.0;
  c.block = BlockSize{4, 4};
  return c;
}

void ExplainConfig::validate() const {
  if (!(tau > 0.0 && tau < 1.0)) throw RangeError("tau must lie in (0, 1)");
  if (sigma < 1) throw RangeError("sigma must be at least 1");
  if (!(lambda >= 0.0)) throw RangeError("lambda must be non-negative");
  if (!(eta >= 0.0)) throw RangeError("eta must be non-negative");
  if (!(beta > 0.0)) throw RangeError("beta must be positive");
  if (reference_count < 1) throw RangeError("reference count must be at least 1");
  if (!(adam.lr > 0.0)) throw RangeError("learning rate must be positive");
  if (max_outer && *max_outer < 1) throw RangeError("max_outer must be at least 1");
  if (block && (block->height == 0 || block->width == 0)) throw RangeError("block size must be positive");
  if (scope == Scope::full && objective != Objective::wachter) {
    throw RangeError("full scope is only defined for the wachter objective");
  }
}

json to_json(const ExplainConfig& c) {
  json j{{"tau", c.tau},
         {"sigma", c.sigma},
         {"lambda", c.lambda},
         {"eta", c.eta},
         {"beta", c.beta},
         {"N", c.reference_count},
         {"lr", c.adam.lr},
         {"adam_beta1", c.adam.beta1},
         {"adam_beta2", c.adam.beta2},
         {"adam_epsilon", c.adam.epsilon},
         {"objective", to_string(c.objective)},
         {"scope", to_string(c.scope)},
         {"rank_mode", to_string(c.rank_mode)},
         {"rank_gradient", c.rank_gradient == net::GradientOf::probability ? "probability" : "logit"},
         {"logit_norm", to_string(c.logit_norm)},
         {"clamp", c.clamp},
         {"warm_start", c.warm_start},
         {"seed", c.seed}};
  j["block"] = c.block ? json::array({c.block->height, c.block->width}) : json(nullptr);
  j["max_outer"] = c.max_outer ? json(*c.max_outer) : json(nullptr);
  return j;
}

FeatureVector compose(const FeatureVector& x, const BinaryMask& m, std::span<const double> c) {
  if (m.size() != x.size() || c.size() != x.size()) {
    throw DimensionError("compose: input, mask and composite lengths differ");
  }
  FeatureVector out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (m.bits[i] != 0) out.values[i] = c[i];
  }
  return out;
}

FeatureVector compose_clamped(const FeatureVector& x, const BinaryMask& m,
                              std::span<const double> c) {
  FeatureVector out = compose(x, m, c);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (m.bits[i] != 0) {
      const Interval b = x.bound(i);
      out.values[i] = std::clamp(out.values[i], b.lo, b.hi);
    }
  }
  return out;
}

std::vector<std::size_t> rank_units(std::span<const double> feature_gradient,
                                    const UnitLayout& layout) {
  std::vector<double> magnitude(feature_gradient.size());
  std::transform(feature_gradient.begin(), feature_gradient.end(), magnitude.begin(),
                 [](double g) { return std::abs(g); });
  const std::vector<double> scores = layout.pool(magnitude);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<std::size_t> rank_features(const net::NetworkModel& model, const FeatureVector& x,
                                       std::size_t target, const UnitLayout& layout,
                                       net::GradientOf of) {
  return rank_units(net::input_gradient(model, x.span(), target, of), layout);
}

std::size_t masking_step(ExplainSession& session, std::span<const std::size_t> ranking,
                         std::size_t n, RankMode mode) {
  const std::size_t units = session.layout.unit_count();
  if (n == 0 || n > units) {
    throw BudgetError("masking step " + std::to_string(n) + " exceeds the " +
                      std::to_string(units) + " available units");
  }
  auto is_masked = [&](std::size_t u) {
    return std::find(session.selection_order.begin(), session.selection_order.end(), u) !=
           session.selection_order.end();
  };
  std::optional<std::size_t> chosen;
  if (mode == RankMode::fixed) {
    if (n > ranking.size()) throw BudgetError("ranking shorter than masking step");
    if (!is_masked(ranking[n - 1])) chosen = ranking[n - 1];
  } else {
    const auto it = std::find_if(ranking.begin(), ranking.end(), [&](std::size_t u) { return !is_masked(u); });
    if (it != ranking.end()) chosen = *it;
  }
  if (!chosen) throw BudgetError("every masking unit is already in use");
  for (std::size_t f : session.layout.members(*chosen)) session.mask.bits[f] = 1;
  session.selection_order.push_back(*chosen);
  return *chosen;
}

double proximity_penalty(std::span<const double> x_prime, std::span<const double> x, double lambda,
                         std::span<double> grad) {
  if (x_prime.size() != x.size()) throw DimensionError("proximity: length mismatch");
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sq += (x_prime[i] - x[i]) * (x_prime[i] - x[i]);
  const double norm = std::sqrt(sq);
  if (!grad.empty() && norm > 0.0 && lambda != 0.0) {
    for (std::size_t i = 0; i < x.size(); ++i) grad[i] += lambda * (x_prime[i] - x[i]) / norm;
  }
  return lambda * norm;
}

namespace {

// Value and logit-space gradient of the logit-matching term.
double logit_match(std::span<const double> logits, std::span<const double> mean_logits,
                   LogitNorm norm, std::vector<double>& logit_grad) {
  if (logits.size() != mean_logits.size()) {
    throw DimensionError("reference logits have " + std::to_string(mean_logits.size()) +
                         " classes, model has " + std::to_string(logits.size()));
  }
  logit_grad.assign(logits.size(), 0.0);
  if (norm == LogitNorm::vector) {
    double sq = 0.0;
    for (std::size_t k = 0; k < logits.size(); ++k) sq += (logits[k] - mean_logits[k]) * (logits[k] - mean_logits[k]);
    const double value = std::sqrt(sq);
    if (value > 0.0) {
      for (std::size_t k = 0; k < logits.size(); ++k) logit_grad[k] = (logits[k] - mean_logits[k]) / value;
    }
    return value;
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) sum += logits[k] - mean_logits[k];
  const double sign = sum > 0.0 ? 1.0 : (sum < 0.0 ? -1.0 : 0.0);
  std::fill(logit_grad.begin(), logit_grad.end(), sign);
  return std::abs(sum);
}

}  // namespace

LossEval gradual_loss_eval(const net::NetworkModel& model, std::span<const double> x_prime,
                           std::span<const double> x, std::span<const double> mean_logits,
                           std::size_t target, double lambda, LogitNorm norm) {
  const net::ForwardTrace trace = net::forward_trace(model, x_prime);
  LossEval eval;
  std::vector<double> logit_grad;
  eval.logit_term = logit_match(trace.logits(), mean_logits, norm, logit_grad);
  eval.target_prob = target < model.class_count() ? net::softmax(trace.logits())[target] : 0.0;
  eval.gradient = net::backprop_to_input(model, trace, logit_grad);
  eval.proximity_term = proximity_penalty(x_prime, x, lambda, eval.gradient);
  eval.value = eval.logit_term + eval.proximity_term;
  return eval;
}

double gradual_loss(const net::NetworkModel& model, std::span<const double> x_prime,
                    std::span<const double> x, std::span<const double> mean_logits, double lambda,
                    LogitNorm norm) {
  std::vector<double> unused;
  const double logit_term = logit_match(net::forward(model, x_prime), mean_logits, norm, unused);
  return logit_term + proximity_penalty(x_prime, x, lambda);
}

double tv_regularizer_eval(std::span<const double> values, ImageShape shape, double beta,
                           double weight, std::span<double> grad) {
  if (shape.size() != values.size()) throw DimensionError("TV: image shape does not match values");
  const std::size_t h = shape.height;
  const std::size_t w = shape.width;
  const bool want_grad = !grad.empty() && weight != 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t here = i * w + j;
      const bool has_right = j + 1 < w;
      const bool has_down = i + 1 < h;
      if (!has_right && !has_down) continue;
      const double dx = has_right ? values[here + 1] - values[here] : 0.0;
      const double dy = has_down ? values[here + w] - values[here] : 0.0;
      const double s = std::pow(std::abs(dx), beta) + std::pow(std::abs(dy), beta);
      total += std::pow(s, beta / 2.0);
      if (!want_grad || s <= 0.0) continue;
      // d/dd of (|dx|^b + |dy|^b)^(b/2) = (b/2) s^(b/2-1) * b |d|^(b-1) sgn(d)
      const double outer = weight * (beta / 2.0) * std::pow(s, beta / 2.0 - 1.0);
      auto inner = [&](double d) {
        if (d == 0.0) return 0.0;
        return beta * std::pow(std::abs(d), beta - 1.0) * (d > 0.0 ? 1.0 : -1.0);
      };
      if (has_right) {
        const double g = outer * inner(dx);
        grad[here + 1] += g;
        grad[here] -= g;
      }
      if (has_down) {
        const double g = outer * inner(dy);
        grad[here + w] += g;
        grad[here] -= g;
      }
    }
  }
  return weight * total;
}

double tv_regularizer(const FeatureVector& image, double beta) {
  if (!image.image) throw DimensionError("total variation needs an image-shaped input");
  return tv_regularizer_eval(image.values, *image.image, beta, 1.0, {});
}

LossEval objective_eval(const net::NetworkModel& model, const ExplainSession& session,
                        std::span<const double> x_prime, const data::ReferenceLogitStats& ref) {
  const ExplainConfig& c = session.config;
  const std::span<const double> x = session.original.span();
  LossEval eval;
  if (c.objective == Objective::gradual) {
    eval = gradual_loss_eval(model, x_prime, x, ref.mean_logits, session.target, c.lambda, c.logit_norm);
  } else {
    eval = baselines::wachter_loss_eval(model, x_prime, x, session.target, c.lambda);
  }
  if (session.original.image && c.eta > 0.0) {
    eval.tv_term = tv_regularizer_eval(x_prime, *session.original.image, c.beta, c.eta, eval.gradient);
    eval.value += eval.tv_term;
  }
  return eval;
}

double target_probability(const net::NetworkModel& model, std::span<const double> x,
                          std::size_t target) {
  return net::softmax(net::forward(model, x))[target];
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double e) { return std::isfinite(e); });
}

void project(std::span<double> vars, std::span<const std::size_t> features, const FeatureVector& x) {
  for (std::size_t j = 0; j < vars.size(); ++j) {
    const Interval b = x.bound(features[j]);
    vars[j] = std::clamp(vars[j], b.lo, b.hi);
  }
}

// Shared inner loop. With `stop_at_tau`, the loop ends as soon as an
// evaluation reaches the target probability.
void optimize_composite(ExplainSession& session, const net::NetworkModel& model,
                        const data::ReferenceLogitStats& ref, bool stop_at_tau) {
  const ExplainConfig& c = session.config;
  std::vector<std::size_t> masked;
  for (std::size_t i = 0; i < session.mask.size(); ++i) {
    if (session.mask.bits[i] != 0) masked.push_back(i);
  }
  if (masked.empty()) throw ValidationError("composition step needs at least one masked unit");

  std::vector<double> vars(masked.size());
  for (std::size_t j = 0; j < masked.size(); ++j) vars[j] = session.composite[masked[j]];
  if (c.clamp) project(vars, masked, session.original);
  const std::vector<double> start = vars;

  net::AdamState adam(masked.size(), c.adam);
  std::vector<double> x_prime = session.original.values;
  std::vector<double> grad(masked.size());
  double last = 0.0;
  for (std::size_t step = 0; step <= c.sigma; ++step) {
    for (std::size_t j = 0; j < masked.size(); ++j) x_prime[masked[j]] = vars[j];
    const LossEval eval = objective_eval(model, session, x_prime, ref);
    if (!std::isfinite(eval.value) || !all_finite(eval.gradient)) {
      vars = start;
      session.diverged = true;
      break;
    }
    session.loss_trace.push_back(eval.value);
    last = eval.value;
    if (step == c.sigma || (stop_at_tau && eval.target_prob >= c.tau)) break;
    for (std::size_t j = 0; j < masked.size(); ++j) grad[j] = eval.gradient[masked[j]];
    net::adam_step(adam, vars, grad);
    if (c.clamp) project(vars, masked, session.original);
  }
  for (std::size_t j = 0; j < masked.size(); ++j) session.composite[masked[j]] = vars[j];
  session.counterfactual = compose(session.original, session.mask, session.composite);
  if (session.diverged) {
    for (std::size_t j = 0; j < masked.size(); ++j) x_prime[masked[j]] = vars[j];
    last = objective_eval(model, session, x_prime, ref).value;
  }
  session.final_loss = last;
  session.outer_loss.push_back(last);
}

void draw_composite(std::vector<double>& composite, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  for (double& v : composite) v = dist(rng);
}

void check_target(const net::NetworkModel& model, std::size_t target) {
  if (target >= model.class_count()) {
    throw RangeError("target class " + std::to_string(target) + " outside [0, " +
                     std::to_string(model.class_count()) + ")");
  }
}

}  // namespace

void composition_step(ExplainSession& session, const net::NetworkModel& model,
                      const data::ReferenceLogitStats& ref) {
  optimize_composite(session, model, ref, false);
}

ExplainSession run(const net::NetworkModel& model, const FeatureVector& x, std::size_t target,
                   const data::ReferenceLogitStats& ref, const ExplainConfig& config) {
  config.validate();
  x.validate();
  check_target(model, target);
  if (x.size() != model.input_width()) {
    throw DimensionError("input has " + std::to_string(x.size()) + " features, model expects " +
                         std::to_string(model.input_width()));
  }
  if (config.objective == Objective::gradual && ref.mean_logits.size() != model.class_count()) {
    throw DimensionError("reference statistics do not match the model's class count");
  }

  ExplainSession s;
  s.original = x;
  s.target = target;
  s.objective = config.objective;
  s.scope = config.scope;
  s.config = config;
  s.layout = UnitLayout::for_input(x, config.block);
  s.mask = BinaryMask::zeros(x.size(), s.layout.block());
  s.composite.resize(x.size());
  std::mt19937_64 rng(config.seed);
  draw_composite(s.composite, rng);
  s.counterfactual = x;

  const net::LogitVector logits = net::forward(model, x);
  s.original_class = net::argmax(logits);
  s.initial_prob = net::softmax(logits)[target];
  if (s.initial_prob >= config.tau) {
    s.outcome = Outcome::success;
    return s;
  }

  const std::size_t units = s.layout.unit_count();
  const std::size_t max_outer = std::min(units, config.max_outer.value_or(units));

  if (config.scope == Scope::full) {
    // Unstructured perturbation of every feature, starting from epsilon = 0.
    std::fill(s.mask.bits.begin(), s.mask.bits.end(), std::uint8_t{1});
    s.composite = x.values;
    const std::size_t rounds = config.max_outer.value_or(1);
    for (std::size_t r = 0; r < rounds; ++r) {
      optimize_composite(s, model, ref, true);
      s.prob_trace.push_back(target_probability(model, s.counterfactual.span(), target));
      if (s.prob_trace.back() >= config.tau) break;
    }
    s.outcome = s.prob_trace.back() >= config.tau ? Outcome::success : Outcome::budget_exhausted;
    return s;
  }

  s.ranking = rank_features(model, x, target, s.layout, config.rank_gradient);
  for (std::size_t n = 1; n <= max_outer; ++n) {
    if (config.rank_mode == RankMode::recompute) {
      const auto fresh = rank_features(model, s.counterfactual, target, s.layout, config.rank_gradient);
      masking_step(s, fresh, n, RankMode::recompute);
    } else {
      masking_step(s, s.ranking, n, RankMode::fixed);
    }
    if (!config.warm_start && n > 1) draw_composite(s.composite, rng);
    composition_step(s, model, ref);
    s.prob_trace.push_back(target_probability(model, s.counterfactual.span(), target));
    if (s.prob_trace.back() >= config.tau) {
      s.outcome = Outcome::success;
      return s;
    }
  }
  s.outcome = Outcome::budget_exhausted;
  return s;
}

ExplainSession generate_from_seed(const net::NetworkModel& model, const FeatureVector& seed_image,
                                  std::size_t target, const data::ReferenceLogitStats& ref,
                                  ExplainConfig config) {
  if (!seed_image.image) throw DimensionError("generation needs an image-shaped seed");
  config.lambda = 0.0;
  return run(model, seed_image, target, ref, config);
}

json session_to_json(const ExplainSession& s, const net::NetworkModel* model) {
  json j;
  j["objective"] = to_string(s.objective);
  j["scope"] = to_string(s.scope);
  j["target"] = s.target;
  j["original_class"] = s.original_class;
  j["outcome"] = to_string(s.outcome);
  j["diverged"] = s.diverged;
  j["original"] = s.original.values;
  j["counterfactual"] = s.counterfactual.values;
  std::vector<int> mask(s.mask.bits.begin(), s.mask.bits.end());
  j["mask"] = mask;
  j["selection_order"] = s.selection_order;
  j["initial_prob"] = s.initial_prob;
  j["prob_trace"] = s.prob_trace;
  j["outer_loss"] = s.outer_loss;
  j["final_loss"] = s.final_loss;
  j["inner_steps"] = s.loss_trace.size();
  if (s.original.image) {
    j["image"] = {{"height", s.original.image->height}, {"width", s.original.image->width}};
  }
  if (model != nullptr) {
    j["counterfactual_logits"] = net::forward(*model, s.counterfactual);
    j["predicted_class"] = net::predict(*model, s.counterfactual.span());
    if (model->norm) {
      j["original_raw"] = model->norm->invert(s.original.values);
      j["counterfactual_raw"] = model->norm->invert(s.counterfactual.values);
    }
  }
  j["config"] = to_json(s.config);
  return j;
}

}  // namespace gradcf::explain
