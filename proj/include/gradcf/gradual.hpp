#pragma once

// Gradual construction of counterfactuals: alternate masking steps, which
// add the next most influential feature (or image block) to the mask, and
// composition steps, which optimize the composite values of the masked
// features, until the target class probability reaches tau.
//
//   X' = (1 - M) o X + M o C

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradcf/data_io.hpp"
#include "gradcf/feature_vector.hpp"
#include "gradcf/tensor_net.hpp"

namespace gradcf::explain {

struct BlockSize {
  std::size_t height = 4;
  std::size_t width = 4;
  bool operator==(const BlockSize&) const = default;
};

// Partition of the feature indices into masking units. Flat inputs use one
// unit per feature. Image inputs with a block size use row-major blocks;
// blocks at the right and bottom edges may be smaller.
class UnitLayout {
 public:
  UnitLayout() = default;
  static UnitLayout features(std::size_t d);
  static UnitLayout blocks(ImageShape shape, BlockSize block);
  static UnitLayout for_input(const FeatureVector& x, std::optional<BlockSize> block);

  std::size_t unit_count() const { return offsets_.empty() ? 0 : offsets_.size() - 1; }
  std::size_t feature_count() const { return unit_of_.size(); }
  std::span<const std::size_t> members(std::size_t unit) const;
  std::size_t unit_of(std::size_t feature) const { return unit_of_.at(feature); }
  const std::optional<BlockSize>& block() const { return block_; }

  // Sums per-feature scores into per-unit scores.
  std::vector<double> pool(std::span<const double> feature_scores) const;

  bool operator==(const UnitLayout&) const = default;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<std::size_t> members_;
  std::vector<std::size_t> unit_of_;
  std::optional<BlockSize> block_;
};

struct BinaryMask {
  std::vector<std::uint8_t> bits;
  std::optional<BlockSize> block;

  static BinaryMask zeros(std::size_t d, std::optional<BlockSize> block = std::nullopt) {
    return {std::vector<std::uint8_t>(d, 0), block};
  }
  std::size_t size() const { return bits.size(); }
  std::size_t count() const;
  bool operator==(const BinaryMask&) const = default;
};

enum class Objective { gradual, wachter, ablation };
// masked: perturb only through the mask scaffold. full: perturb every feature
// at once, starting from X (wachter only).
enum class Scope { masked, full };
// fixed ranks once on the original input; recompute re-ranks on X' before
// each masking step.
enum class RankMode { fixed, recompute };
// vector: L2 norm of the per-class logit difference. scalar_sum: absolute
// value of the summed differences.
enum class LogitNorm { vector, scalar_sum };
enum class Outcome { success, budget_exhausted };

std::string to_string(Objective o);
std::string to_string(Scope s);
std::string to_string(RankMode r);
std::string to_string(LogitNorm n);
std::string to_string(Outcome o);
Objective parse_objective(const std::string& s);
RankMode parse_rank_mode(const std::string& s);

struct ExplainConfig {
  double tau = 0.5;
  std::size_t sigma = 500;  // Adam steps per composition step
  double lambda = 0.3;      // proximity weight
  double eta = 0.0;         // total-variation weight, images only
  double beta = 2.0;        // total-variation exponent
  std::size_t reference_count = 100;
  net::AdamHyper adam{};    // lr 0.1
  std::optional<BlockSize> block;
  Objective objective = Objective::gradual;
  Scope scope = Scope::masked;
  RankMode rank_mode = RankMode::fixed;
  net::GradientOf rank_gradient = net::GradientOf::probability;
  LogitNorm logit_norm = LogitNorm::vector;
  bool clamp = false;       // project composite onto feature bounds
  bool warm_start = true;   // keep C across outer iterations
  std::optional<std::size_t> max_outer;  // default: number of units
  std::uint64_t seed = 0;

  // tau 0.5, sigma 500
  static ExplainConfig tabular();
  // tau 0.9, sigma 1000, 4x4 blocks, eta 0.3, beta 2
  static ExplainConfig image();

  // Throws RangeError.
  void validate() const;
};

nlohmann::json to_json(const ExplainConfig& config);

struct ExplainSession {
  FeatureVector original;
  std::size_t target = 0;
  std::size_t original_class = 0;
  Objective objective = Objective::gradual;
  Scope scope = Scope::masked;
  UnitLayout layout;
  BinaryMask mask;
  std::vector<double> composite;
  FeatureVector counterfactual;
  std::vector<std::size_t> ranking;          // unit order used by fixed ranking
  std::vector<std::size_t> selection_order;  // units in the order they were masked
  double initial_prob = 0.0;
  std::vector<double> prob_trace;            // target probability after each outer iteration
  std::vector<double> loss_trace;            // every inner evaluation
  std::vector<double> outer_loss;            // final loss of each composition step
  double final_loss = 0.0;
  bool diverged = false;
  Outcome outcome = Outcome::budget_exhausted;
  ExplainConfig config;

  std::size_t masked_units() const { return selection_order.size(); }
  double final_prob() const { return prob_trace.empty() ? initial_prob : prob_trace.back(); }
};

// Elementwise (1 - m) x + m c. Unmasked entries are copied from x exactly.
FeatureVector compose(const FeatureVector& x, const BinaryMask& m, std::span<const double> c);
// As above, then masked entries are clamped into x's feature bounds.
FeatureVector compose_clamped(const FeatureVector& x, const BinaryMask& m,
                              std::span<const double> c);

// Units sorted by descending |grad f_ct(x)| (summed over a unit's features);
// ties break by ascending unit index.
std::vector<std::size_t> rank_units(std::span<const double> feature_gradient,
                                    const UnitLayout& layout);
std::vector<std::size_t> rank_features(const net::NetworkModel& model, const FeatureVector& x,
                                       std::size_t target, const UnitLayout& layout,
                                       net::GradientOf of = net::GradientOf::probability);

// Sets the n-th (1-based) unit of `ranking` under RankMode::fixed, or the
// best-ranked unit not yet masked under RankMode::recompute. Returns the unit
// chosen. Throws BudgetError when n exceeds the unit count or every unit is
// already masked.
std::size_t masking_step(ExplainSession& session, std::span<const std::size_t> ranking,
                         std::size_t n, RankMode mode = RankMode::fixed);

struct LossEval {
  double value = 0.0;
  double logit_term = 0.0;
  double proximity_term = 0.0;
  double tv_term = 0.0;
  double target_prob = 0.0;
  std::vector<double> gradient;  // d value / d X'
};

// ||f'(X') - mean_logits||_2 + lambda ||X' - X||_2
double gradual_loss(const net::NetworkModel& model, std::span<const double> x_prime,
                    std::span<const double> x, std::span<const double> mean_logits, double lambda,
                    LogitNorm norm = LogitNorm::vector);
LossEval gradual_loss_eval(const net::NetworkModel& model, std::span<const double> x_prime,
                           std::span<const double> x, std::span<const double> mean_logits,
                           std::size_t target, double lambda, LogitNorm norm = LogitNorm::vector);

// lambda ||X' - X||_2, gradient added into `grad` when non-empty.
double proximity_penalty(std::span<const double> x_prime, std::span<const double> x, double lambda,
                         std::span<double> grad = {});

// sum_{i,j} (|dx|^beta + |dy|^beta)^(beta/2) over horizontal and vertical
// neighbour differences that exist. Throws DimensionError on flat input.
double tv_regularizer(const FeatureVector& image, double beta);
// Value of weight * tv, gradient added into `grad`.
double tv_regularizer_eval(std::span<const double> values, ImageShape shape, double beta,
                           double weight, std::span<double> grad);

// Full objective for the session's configured objective, including the TV
// term for image inputs.
LossEval objective_eval(const net::NetworkModel& model, const ExplainSession& session,
                        std::span<const double> x_prime, const data::ReferenceLogitStats& ref);

// sigma Adam steps on the masked coordinates of C only. A fresh Adam state is
// used per call; C itself carries over between calls. A non-finite loss
// restores the composite from the start of the step and sets `diverged`.
void composition_step(ExplainSession& session, const net::NetworkModel& model,
                      const data::ReferenceLogitStats& ref);

// Gradual construction loop. Returns a success session when the target
// probability reaches tau, otherwise a budget_exhausted partial session.
ExplainSession run(const net::NetworkModel& model, const FeatureVector& x, std::size_t target,
                   const data::ReferenceLogitStats& ref, const ExplainConfig& config);

// Same machinery with the proximity weight forced to zero, starting from a
// seed image (typically all zeros).
ExplainSession generate_from_seed(const net::NetworkModel& model, const FeatureVector& seed_image,
                                  std::size_t target, const data::ReferenceLogitStats& ref,
                                  ExplainConfig config);

double target_probability(const net::NetworkModel& model, std::span<const double> x,
                          std::size_t target);

nlohmann::json session_to_json(const ExplainSession& session,
                               const net::NetworkModel* model = nullptr);

}  // namespace gradcf::explain
