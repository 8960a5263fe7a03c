#include "gradcf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "gradcf/error.hpp"
#include "gradcf/kernels.hpp"

namespace gradcf::metrics {

using nlohmann::json;

namespace {

void check_lengths(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("metric inputs differ in length (" + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + ")");
  }
}

}  // namespace

std::size_t phi1(std::span<const double> x, std::span<const double> x_prime) {
  check_lengths(x, x_prime);
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) n += std::abs(x[i] - x_prime[i]) >= kChangeThreshold ? 1 : 0;
  return n;
}

double phi2(std::span<const double> x, std::span<const double> x_prime) {
  check_lengths(x, x_prime);
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - x_prime[i]) * (x[i] - x_prime[i]);
  return std::sqrt(sq);
}

std::optional<double> coherence(std::span<const double> x_o, std::span<const double> x_o_prime,
                                std::span<const Neighbor> neighbors, std::size_t epsilon) {
  std::optional<double> best;
  for (const Neighbor& nb : neighbors) {
    if (phi1(nb.x, x_o) > epsilon) continue;
    const double input_distance = phi2(nb.x, x_o);
    if (input_distance == 0.0) continue;
    const double ratio = phi2(nb.x_prime, x_o_prime) / input_distance;
    if (!best || ratio > *best) best = ratio;
  }
  return best;
}

Quartiles quartiles(std::vector<double> values) {
  if (values.empty()) throw ValidationError("quartiles of an empty sample");
  std::sort(values.begin(), values.end());
  auto at = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + (values[hi] - values[lo]) * frac;
  };
  return {values.front(), at(0.25), at(0.5), at(0.75), values.back()};
}

namespace {

std::vector<Quartiles> per_class(std::span<const net::LogitVector> logits) {
  std::vector<Quartiles> out;
  const std::size_t k = logits.front().size();
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> column;
    column.reserve(logits.size());
    for (const auto& l : logits) column.push_back(l[c]);
    out.push_back(quartiles(std::move(column)));
  }
  return out;
}

}  // namespace

LogitDivergence logit_divergence(std::span<const net::LogitVector> counterfactual_logits,
                                 const data::ReferenceLogitStats& ref) {
  if (counterfactual_logits.empty()) throw ValidationError("logit divergence of an empty batch");
  LogitDivergence out;
  out.counterfactual = per_class(counterfactual_logits);
  if (!ref.sample_logits.empty()) out.reference = per_class(ref.sample_logits);
  double total = 0.0;
  for (const auto& l : counterfactual_logits) {
    const double d = phi2(l, ref.mean_logits);
    out.distances.push_back(d);
    total += d;
  }
  out.mean_distance = total / static_cast<double>(counterfactual_logits.size());
  return out;
}

LogitDivergence logit_divergence(const net::NetworkModel& model,
                                 std::span<const explain::ExplainSession> sessions,
                                 const data::ReferenceLogitStats& ref) {
  std::vector<net::LogitVector> logits;
  for (const auto& s : sessions) {
    if (s.target != ref.target) {
      throw ValidationError("logit divergence needs every session to target class " +
                            std::to_string(ref.target));
    }
    logits.push_back(net::forward(model, s.counterfactual));
  }
  return logit_divergence(logits, ref);
}

Summary summarize(std::span<const double> values) {
  Summary s;
  s.count = values.size();
  if (values.empty()) return s;
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

TargetPolicy next_class_policy(std::size_t class_count) {
  return [class_count](std::size_t predicted) { return (predicted + 1) % class_count; };
}

TargetPolicy fixed_target_policy(std::size_t target) {
  return [target](std::size_t) { return target; };
}

std::uint64_t instance_seed(std::uint64_t base, std::size_t index) {
  // splitmix64 finalizer over (base, index)
  std::uint64_t z = base + 0x9e3779b97f4a7c15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

BatchResult evaluate_batch(const net::NetworkModel& model, const data::Dataset& test,
                           std::span<const std::size_t> instances, const TargetPolicy& policy,
                           const ReferenceLookup& refs, const BatchOptions& options) {
  if (instances.empty()) throw ValidationError("evaluation needs at least one instance");
  options.config.validate();
  for (std::size_t idx : instances) {
    if (idx >= test.size()) throw RangeError("instance index " + std::to_string(idx) + " out of range");
  }

  // Targets and reference statistics are resolved serially so the lookup
  // never runs concurrently.
  std::vector<std::size_t> targets(instances.size());
  std::vector<const data::ReferenceLogitStats*> ref_of(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const std::size_t predicted = net::predict(model, test.instances[instances[i]].span());
    targets[i] = policy(predicted);
    ref_of[i] = &refs(targets[i]);
  }

  BatchResult result;
  result.sessions.resize(instances.size());
  std::vector<std::exception_ptr> failures(instances.size());
  const auto n = static_cast<std::ptrdiff_t>(instances.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(kernels::max_threads())
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto u = static_cast<std::size_t>(i);
    try {
      explain::ExplainConfig cfg = options.config;
      cfg.seed = instance_seed(options.config.seed, instances[u]);
      result.sessions[u] = explain::run(model, test.instances[instances[u]], targets[u], *ref_of[u], cfg);
    } catch (...) {
      failures[u] = std::current_exception();
    }
  }
  for (const auto& failure : failures) {
    if (failure) std::rethrow_exception(failure);
  }

  MetricsReport& report = result.report;
  report.method = options.method;
  report.dataset = options.dataset;
  report.epsilon = options.epsilon;
  std::size_t successes = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& s = result.sessions[i];
    InstanceRow row;
    row.index = instances[i];
    row.original_class = s.original_class;
    row.target = s.target;
    row.outcome = s.outcome;
    row.masked_units = s.masked_units();
    row.phi1 = phi1(s.original.span(), s.counterfactual.span());
    row.phi2 = phi2(s.original.span(), s.counterfactual.span());
    row.logit_distance = phi2(net::forward(model, s.counterfactual), ref_of[i]->mean_logits);
    row.final_prob = s.final_prob();
    successes += s.outcome == explain::Outcome::success ? 1 : 0;
    report.rows.push_back(row);
  }

  std::vector<double> phi1s, phi2s, coh, dist;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    InstanceRow& row = report.rows[i];
    if (row.outcome != explain::Outcome::success) continue;
    std::vector<Neighbor> neighbors;
    for (std::size_t j = 0; j < report.rows.size(); ++j) {
      if (j == i || report.rows[j].outcome != explain::Outcome::success ||
          report.rows[j].target != row.target) {
        continue;
      }
      neighbors.push_back({result.sessions[j].original.span(), result.sessions[j].counterfactual.span()});
    }
    row.coherence = coherence(result.sessions[i].original.span(),
                              result.sessions[i].counterfactual.span(), neighbors, options.epsilon);
    phi1s.push_back(static_cast<double>(row.phi1));
    phi2s.push_back(row.phi2);
    dist.push_back(row.logit_distance);
    if (row.coherence) {
      coh.push_back(*row.coherence);
    } else {
      ++report.undefined_coherence;
    }
  }
  report.phi1 = summarize(phi1s);
  report.phi2 = summarize(phi2s);
  report.coherence = summarize(coh);
  report.logit_distance = summarize(dist);
  report.success_rate = static_cast<double>(successes) / static_cast<double>(instances.size());
  return result;
}

std::string report_csv_header() {
  return "method,dataset,phi1_mean,phi1_std,phi2_mean,phi2_std,coherence_mean,coherence_std,"
         "logit_dist_mean,success_rate";
}

namespace {

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

std::string fmt(const Summary& s, double Summary::*field) {
  return s.count == 0 ? std::string() : fmt(s.*field);
}

}  // namespace

std::string report_csv_row(const MetricsReport& r) {
  std::ostringstream out;
  out << r.method << ',' << r.dataset << ',' << fmt(r.phi1, &Summary::mean) << ','
      << fmt(r.phi1, &Summary::std) << ',' << fmt(r.phi2, &Summary::mean) << ','
      << fmt(r.phi2, &Summary::std) << ',' << fmt(r.coherence, &Summary::mean) << ','
      << fmt(r.coherence, &Summary::std) << ',' << fmt(r.logit_distance, &Summary::mean) << ','
      << fmt(r.success_rate);
  return out.str();
}

namespace {

json summary_json(const Summary& s) {
  if (s.count == 0) return {{"mean", nullptr}, {"std", nullptr}, {"count", 0}};
  return {{"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}

}  // namespace

json report_to_json(const MetricsReport& r) {
  json rows = json::array();
  for (const InstanceRow& row : r.rows) {
    rows.push_back({{"index", row.index},
                    {"original_class", row.original_class},
                    {"target", row.target},
                    {"outcome", explain::to_string(row.outcome)},
                    {"masked_units", row.masked_units},
                    {"phi1", row.phi1},
                    {"phi2", row.phi2},
                    {"coherence", row.coherence ? json(*row.coherence) : json(nullptr)},
                    {"logit_distance", row.logit_distance},
                    {"final_prob", row.final_prob}});
  }
  return {{"method", r.method},
          {"dataset", r.dataset},
          {"phi1", summary_json(r.phi1)},
          {"phi2", summary_json(r.phi2)},
          {"coherence", summary_json(r.coherence)},
          {"logit_distance", summary_json(r.logit_distance)},
          {"success_rate", r.success_rate},
          {"undefined_coherence", r.undefined_coherence},
          {"epsilon", r.epsilon},
          {"rows", std::move(rows)}};
}

}  // namespace gradcf::metrics
