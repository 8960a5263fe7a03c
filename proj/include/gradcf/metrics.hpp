#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradcf/data_io.hpp"
#include "gradcf/gradual.hpp"

namespace gradcf::metrics {

// Differences below this are treated as optimizer noise.
inline constexpr double kChangeThreshold = 0.001;

// Number of features with |x_i - x'_i| >= 0.001.
std::size_t phi1(std::span<const double> x, std::span<const double> x_prime);
// ||x - x'||_2
double phi2(std::span<const double> x, std::span<const double> x_prime);

struct Neighbor {
  std::span<const double> x;
  std::span<const double> x_prime;
};

// Largest ||X'_i - X'_o|| / ||X_i - X_o|| over neighbours that differ from X_o
// in at most `epsilon` features (by the phi1 threshold). Neighbours at zero
// distance are skipped. nullopt when no neighbour qualifies.
std::optional<double> coherence(std::span<const double> x_o, std::span<const double> x_o_prime,
                                std::span<const Neighbor> neighbors, std::size_t epsilon);

struct Quartiles {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

// Linear interpolation between order statistics. Requires non-empty input.
Quartiles quartiles(std::vector<double> values);

struct LogitDivergence {
  std::vector<Quartiles> counterfactual;  // per class
  std::vector<Quartiles> reference;       // per class
  std::vector<double> distances;          // per logit vector, to ref.mean_logits
  double mean_distance = 0.0;
};

// Box-plot data of counterfactual and reference-sample logits per class, plus
// the mean L2 distance of the counterfactual logit vectors to the reference
// mean. Throws ValidationError on an empty batch.
LogitDivergence logit_divergence(std::span<const net::LogitVector> counterfactual_logits,
                                 const data::ReferenceLogitStats& ref);
LogitDivergence logit_divergence(const net::NetworkModel& model,
                                 std::span<const explain::ExplainSession> sessions,
                                 const data::ReferenceLogitStats& ref);

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::size_t count = 0;
};
Summary summarize(std::span<const double> values);

struct InstanceRow {
  std::size_t index = 0;  // into the evaluated dataset
  std::size_t original_class = 0;
  std::size_t target = 0;
  explain::Outcome outcome = explain::Outcome::budget_exhausted;
  std::size_t masked_units = 0;
  std::size_t phi1 = 0;
  double phi2 = 0.0;
  std::optional<double> coherence;
  double logit_distance = 0.0;
  double final_prob = 0.0;
};

struct MetricsReport {
  std::string method;
  std::string dataset;
  std::vector<InstanceRow> rows;
  Summary phi1;
  Summary phi2;
  Summary coherence;
  Summary logit_distance;
  double success_rate = 0.0;
  std::size_t undefined_coherence = 0;  // successful rows with an empty neighbourhood
  std::size_t epsilon = 3;
};

// Decides the target class for an instance given its predicted class.
using TargetPolicy = std::function<std::size_t(std::size_t predicted)>;
// (predicted + 1) mod K
TargetPolicy next_class_policy(std::size_t class_count);
TargetPolicy fixed_target_policy(std::size_t target);

struct BatchOptions {
  std::string method;
  std::string dataset;
  std::size_t epsilon = 3;
  // Per-instance composite seeds derive from config.seed and the instance index.
  explain::ExplainConfig config;
};

// Reference statistics per target class, filled lazily by the caller.
using ReferenceLookup = std::function<const data::ReferenceLogitStats&(std::size_t target)>;

struct BatchResult {
  MetricsReport report;
  std::vector<explain::ExplainSession> sessions;  // aligned with report.rows
};

// Explains every listed instance (in parallel over instances, results kept in
// list order), then aggregates. Means cover successful sessions only; the
// coherence neighbourhood is drawn from the other successful sessions with
// the same target class. Throws ValidationError on an empty list.
BatchResult evaluate_batch(const net::NetworkModel& model, const data::Dataset& test,
                           std::span<const std::size_t> instances, const TargetPolicy& policy,
                           const ReferenceLookup& refs, const BatchOptions& options);

// Seed for instance i of a batch run.
std::uint64_t instance_seed(std::uint64_t base, std::size_t index);

std::string report_csv_header();
std::string report_csv_row(const MetricsReport& report);
nlohmann::json report_to_json(const MetricsReport& report);

}  // namespace gradcf::metrics
