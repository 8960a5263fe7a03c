// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fail.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "gradcf/baselines.hpp"
#include "gradcf/cli.hpp"
#include "gradcf/data_io.hpp"
#include "gradcf/gradual.hpp"
#include "gradcf/metrics.hpp"
#include "gradcf/tensor_net.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace gradcf;

namespace {

const fs::path kWork = fs::current_path() / "acceptance_work";
const fs::path kMnist = fs::path(GRADCF_TEST_DATA_DIR) / "mnist";

struct Verdict {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "gradcf");
  return cli::run(args);
}

// Blobs shared by criteria 2-4.
struct Blobs {
  data::Dataset train, test;
  net::NetworkModel model;
  double test_accuracy = 0.0;
};

const Blobs& blobs() {
  static const Blobs b = [] {
    Blobs out;
    std::tie(out.train, out.test) = data::synth_gaussian({10, 2, 200, 6.0, 7});
    const std::vector<std::size_t> widths{10, 32, 16, 2};
    out.model = net::make_mlp(widths, 7);
    const auto r = net::train(out.model, out.train.views(), out.test.views(), {30, 32, 1e-3, 7});
    out.test_accuracy = *r.test_accuracy;
    return out;
  }();
  return b;
}

std::vector<std::size_t> hundred_test_rows() {
  std::vector<std::size_t> idx(blobs().test.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::mt19937_64 rng(100);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(100);
  std::sort(idx.begin(), idx.end());
  return idx;
}

metrics::BatchResult blob_batch(explain::Objective objective, explain::Scope scope) {
  const auto& b = blobs();
  std::map<std::size_t, data::ReferenceLogitStats> refs;
  for (std::size_t t = 0; t < 2; ++t) refs[t] = data::sample_reference_set(b.train, b.model, t, 100, 5);
  metrics::BatchOptions opt;
  opt.method = explain::to_string(objective);
  opt.dataset = "synth";
  opt.config = explain::ExplainConfig::tabular();
  opt.config.objective = objective;
  opt.config.scope = scope;
  opt.config.seed = 21;
  const auto rows = hundred_test_rows();
  return metrics::evaluate_batch(b.model, b.test, rows, metrics::next_class_policy(2),
                                 [&](std::size_t t) -> const data::ReferenceLogitStats& { return refs.at(t); },
                                 opt);
}

Verdict gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1);
  std::size_t checked = 0, bad = 0;
  double worst = 0.0;
  const auto note = [&](double analytic, double fd) {
    ++checked;
    if (!oracle::close_relative(analytic, fd, 1e-5, 1e-9)) ++bad;
    const double scale = std::max(std::abs(analytic), std::abs(fd));
    if (scale > 1e-6) worst = std::max(worst, std::abs(analytic - fd) / scale);
  };
  for (int pair = 0; pair < 100; ++pair) {
    std::uniform_int_distribution<std::size_t> width(2, 8);
    std::vector<std::size_t> widths{width(rng)};
    const std::size_t depth = 1 + pair % 3;
    for (std::size_t l = 0; l < depth; ++l) widths.push_back(width(rng));
    auto m = oracle::random_model(rng, widths);
    const auto x = oracle::random_vector(rng, widths.front());
    const std::size_t k = m.class_count();
    const std::size_t target = pair % k;

    for (auto of : {net::GradientOf::logit, net::GradientOf::probability}) {
      const auto g = net::input_gradient(m, x, target, of);
      const auto fd = oracle::central_difference(
          [&](const std::vector<double>& v, std::vector<bool>* pat) {
            const auto z = oracle::naive_forward(m, v, pat);
            return of == net::GradientOf::logit ? z[target] : oracle::naive_softmax(z)[target];
          },
          x, 1e-4);
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (fd[i]) note(g[i], *fd[i]);
      }
    }

    const net::LabeledView ex{x, target};
    const auto pg = net::param_gradients(m, std::span(&ex, 1));
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
      for (int which = 0; which < 2; ++which) {
        auto& params = which == 0 ? m.layers[li].weights : m.layers[li].bias;
        const auto& analytic = which == 0 ? pg.weights[li] : pg.biases[li];
        const auto fd = oracle::central_difference(
            [&](const std::vector<double>& p, std::vector<bool>* pat) {
              const auto saved = params;
              params = p;
              const double v = oracle::naive_cross_entropy(oracle::naive_forward(m, x, pat), target);
              params = saved;
              return v;
            },
            params, 1e-4);
        for (std::size_t i = 0; i < params.size(); ++i) {
          if (fd[i]) note(analytic[i], *fd[i]);
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {bad == 0 && checked > 1000 && secs < 10.0,
          std::to_string(checked) + " derivatives, " + std::to_string(bad) + " outside rel 1e-5, worst rel " +
              fmt("%.2e", worst) + ", " + fmt("%.2f s", secs)};
}

Verdict algorithm_contract() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& b = blobs();
  const auto rows = hundred_test_rows();
  std::size_t ok = 0, violations = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& x = b.test.instances[rows[i]];
    const std::size_t target = 1 - net::predict(b.model, x.span());
    const auto ref = data::sample_reference_set(b.train, b.model, target, 100, 5);
    auto c = explain::ExplainConfig::tabular();
    c.seed = metrics::instance_seed(21, rows[i]);
    const auto s = explain::run(b.model, x, target, ref, c);
    if (s.outcome != explain::Outcome::success) continue;
    ++ok;
    if (explain::target_probability(b.model, s.counterfactual.span(), target) < c.tau) ++violations;
    for (std::size_t f = 0; f < x.size(); ++f) {
      if (s.mask.bits[f] == 0 && s.counterfactual.values[f] != x.values[f]) ++violations;
    }
    if (metrics::phi1(x.span(), s.counterfactual.span()) > s.mask.count()) ++violations;
  }
  const double secs = seconds_since(t0);
  return {b.test_accuracy >= 0.98 && ok >= 95 && violations == 0 && secs < 120.0,
          "test acc " + fmt("%.4f", b.test_accuracy) + ", " + std::to_string(ok) + "/100 succeeded, " +
              std::to_string(violations) + " contract violations, " + fmt("%.2f s", secs)};
}

Verdict sparsity_direction() {
  const auto g = blob_batch(explain::Objective::gradual, explain::Scope::masked).report;
  const auto w = blob_batch(explain::Objective::wachter, explain::Scope::full).report;
  return {g.phi1.mean < w.phi1.mean && g.phi1.mean <= 3.0,
          "gradual phi1 " + fmt("%.3f", g.phi1.mean) + " +/- " + fmt("%.3f", g.phi1.std) + " vs wachter(full) " +
              fmt("%.3f", w.phi1.mean) + " +/- " + fmt("%.3f", w.phi1.std)};
}

Verdict ablation_logits() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto g = blob_batch(explain::Objective::gradual, explain::Scope::masked);
  const auto a = blob_batch(explain::Objective::ablation, explain::Scope::masked);
  std::size_t lower = 0, paired = 0;
  double gsum = 0.0, asum = 0.0;
  for (std::size_t i = 0; i < g.report.rows.size(); ++i) {
    const auto& gr = g.report.rows[i];
    const auto& ar = a.report.rows[i];
    if (gr.outcome != explain::Outcome::success || ar.outcome != explain::Outcome::success) continue;
    ++paired;
    gsum += gr.logit_distance;
    asum += ar.logit_distance;
    if (gr.logit_distance < ar.logit_distance) ++lower;
  }
  const double frac = paired ? static_cast<double>(lower) / paired : 0.0;
  const double secs = seconds_since(t0);
  return {paired > 0 && frac >= 0.7 && gsum < asum && secs < 300.0,
          std::to_string(lower) + "/" + std::to_string(paired) + " pairs lower (" + fmt("%.2f", frac) +
              "), mean distance gradual " + fmt("%.3f", gsum / std::max<std::size_t>(paired, 1)) + " vs ablation " +
              fmt("%.3f", asum / std::max<std::size_t>(paired, 1)) + ", " + fmt("%.1f s", secs)};
}

const fs::path kMnistModel = kWork / "mnist_model.json";

Verdict mnist_desk_scale() {
  const auto t0 = std::chrono::steady_clock::now();
  if (cli({"train", "--data", "mnist", "--mnist-dir", kMnist.string(), "--train-limit", "2000", "--seed", "1", "--out",
           kMnistModel.string(), "--out-dir", (kWork / "mnist_train").string()}) != cli::kOk) {
    return {false, "training command failed"};
  }
  const auto manifest = json::parse(slurp(kWork / "mnist_train" / "manifest.json"));
  const double acc = manifest["config"]["test_accuracy"].get<double>();

  const auto model = net::load_model(kMnistModel);
  const auto test = data::load_idx(kMnist / "t10k-images-idx3-ubyte.gz", kMnist / "t10k-labels-idx1-ubyte.gz",
                                   data::Split::test, 1000);
  std::vector<std::size_t> sevens;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] == 7 && net::predict(model, test.instances[i].span()) == 7) sevens.push_back(i);
  }
  std::mt19937_64 rng(77);
  std::shuffle(sevens.begin(), sevens.end(), rng);
  sevens.resize(std::min<std::size_t>(10, sevens.size()));

  std::size_t ok = 0, leaks = 0;
  for (std::size_t k = 0; k < sevens.size(); ++k) {
    const fs::path od = kWork / ("mnist_explain_" + std::to_string(k));
    const int code = cli({"explain", "--model", kMnistModel.string(), "--data", "mnist", "--mnist-dir",
                          kMnist.string(), "--split", "test", "--row", std::to_string(sevens[k]), "--target", "9",
                          "--block", "4x4", "--tau", "0.9", "--seed", std::to_string(k), "--out-dir", od.string()});
    if (code == cli::kOk) ++ok;
    const auto s = json::parse(slurp(od / "session.json"));
    const auto mask = s["mask"].get<std::vector<int>>();
    const std::string a = slurp(od / "original.pgm");
    const std::string c = slurp(od / "counterfactual.pgm");
    const std::size_t header = a.size() - mask.size();
    if (a.size() != c.size() || a.substr(0, header) != c.substr(0, header)) {
      ++leaks;
      continue;
    }
    for (std::size_t p = 0; p < mask.size(); ++p) {
      if (mask[p] == 0 && a[header + p] != c[header + p]) ++leaks;
    }
  }
  const double secs = seconds_since(t0);
  return {acc >= 0.90 && sevens.size() == 10 && ok >= 7 && leaks == 0 && secs < 600.0,
          "test acc " + fmt("%.4f", acc) + ", 7->9 succeeded " + std::to_string(ok) + "/" +
              std::to_string(sevens.size()) + ", " + std::to_string(leaks) + " pixels changed outside the mask, " +
              fmt("%.1f s", secs)};
}

Verdict zero_lambda_generation() {
  const auto t0 = std::chrono::steady_clock::now();
  if (!fs::exists(kMnistModel)) return {false, "MNIST model missing"};
  const auto model = net::load_model(kMnistModel);
  std::size_t reached = 0;
  std::string classes;
  for (std::size_t t = 0; t < 10; ++t) {
    const fs::path od = kWork / ("generate_" + std::to_string(t));
    cli({"generate", "--model", kMnistModel.string(), "--mnist-dir", kMnist.string(), "--target", std::to_string(t),
         "--seed", "3", "--out-dir", od.string()});
    if (!fs::exists(od / "session.json")) continue;
    const auto s = json::parse(slurp(od / "session.json"));
    const auto cf = s["counterfactual"].get<std::vector<double>>();
    if (net::predict(model, cf) == t) {
      ++reached;
      classes += std::to_string(t);
    }
  }
  const double secs = seconds_since(t0);
  return {reached >= 8 && secs < 900.0,
          std::to_string(reached) + "/10 classes reached [" + classes + "], " + fmt("%.1f s", secs)};
}

Verdict metric_oracles() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick(0, 4);
  auto near = [&](const std::vector<double>& base) {
    auto out = base;
    for (double& v : out) {
      switch (pick(rng)) {
        case 0: break;
        case 1: v += 0.0005; break;
        case 2: v += 0.001; break;
        case 3: v -= 0.25; break;
        default: v += std::uniform_real_distribution<double>(-1, 1)(rng);
      }
    }
    return out;
  };
  std::size_t mismatches = 0, below_max = 0;
  for (int c = 0; c < 1000; ++c) {
    const std::size_t d = 1 + c % 12;
    const auto a = oracle::random_vector(rng, d);
    const auto b = near(a);
    if (metrics::phi1(a, b) != oracle::brute_phi1(a, b)) ++mismatches;
    if (metrics::phi2(a, b) != oracle::brute_phi2(a, b)) ++mismatches;
    const auto a_cf = near(a);
    std::vector<std::vector<double>> xs, cfs;
    for (int i = 0; i < c % 6; ++i) {
      xs.push_back(near(a));
      cfs.push_back(near(a_cf));
    }
    std::vector<metrics::Neighbor> nb;
    for (std::size_t i = 0; i < xs.size(); ++i) nb.push_back({xs[i], cfs[i]});
    const std::size_t eps = c % 5;
    const auto got = metrics::coherence(a, a_cf, nb, eps);
    const auto want = oracle::brute_coherence(a, a_cf, xs, cfs, eps);
    if (got.has_value() != want.has_value() || (got && *got != *want)) ++mismatches;
    for (std::size_t i = 0; i < xs.size() && got; ++i) {
      const double den = oracle::brute_phi2(xs[i], a);
      if (oracle::brute_phi1(xs[i], a) <= eps && den > 0.0 && oracle::brute_phi2(cfs[i], a_cf) / den > *got) {
        ++below_max;
      }
    }
  }
  const bool boundary = metrics::phi1(std::vector<double>{0.0}, std::vector<double>{0.001}) == 1;
  return {mismatches == 0 && below_max == 0 && boundary,
          "1000 cases, " + std::to_string(mismatches) + " mismatches, " + std::to_string(below_max) +
              " ratios above coherence, boundary 0.001 counted: " + (boundary ? "yes" : "no")};
}

Verdict determinism() {
  const auto synth = std::vector<std::string>{"--data", "synth", "--data-seed", "7"};
  const fs::path m = kWork / "det_model.json";
  std::vector<std::pair<std::string, std::vector<std::string>>> files;
  std::size_t differing = 0, compared = 0;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path d = kWork / ("det_" + std::to_string(rep));
    auto with = [&](std::vector<std::string> args, bool data = true) {
      if (data) args.insert(args.end(), synth.begin(), synth.end());
      return cli(args);
    };
    with({"train", "--seed", "7", "--out", (d / "model.json").string()});
    if (rep == 0) fs::copy_file(d / "model.json", m, fs::copy_options::overwrite_existing);
    with({"explain", "--model", m.string(), "--row", "4", "--target", "1", "--seed", "9", "--out-dir",
          (d / "explain").string()});
    with({"evaluate", "--model", m.string(), "--n", "40", "--objectives", "gradual,wachter,ablation", "--seed", "9",
          "--out-dir", (d / "evaluate").string()});
    with({"ablate", "--model", m.string(), "--n", "40", "--seed", "9", "--out-dir", (d / "ablate").string()});
    with({"generate", "--model", kMnistModel.string(), "--mnist-dir", kMnist.string(), "--target", "2", "--seed", "9",
          "--out-dir", (d / "generate").string()},
         false);
  }
  for (const char* rel : {"model.json", "explain/session.json", "evaluate/report.csv", "evaluate/report.json",
                          "ablate/ablation.csv", "ablate/ablation.json", "generate/session.json",
                          "generate/generated.pgm"}) {
    const fs::path a = kWork / "det_0" / rel, b = kWork / "det_1" / rel;
    ++compared;
    if (!fs::exists(a) || !fs::exists(b) || slurp(a) != slurp(b)) ++differing;
  }
  return {differing == 0, std::to_string(compared) + " artifacts compared across repeated runs, " +
                              std::to_string(differing) + " differ or are missing"};
}

}  // namespace

int main() {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"1 gradient correctness", gradient_correctness},
      {"2 construction contract on synthetic blobs", algorithm_contract},
      {"3 sparsity versus full-scope probability baseline", sparsity_direction},
      {"4 logit matching versus probability-only ablation", ablation_logits},
      {"5 MNIST desk scale", mnist_desk_scale},
      {"6 zero-proximity generation from a black image", zero_lambda_generation},
      {"7 metric oracles", metric_oracles},
      {"8 CLI determinism", determinism},
  };
  int failed = 0;
  for (const auto& [name, check] : criteria) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s criterion %s: %s\n", v.pass ? "PASS" : "FAIL", name.c_str(), v.detail.c_str());
    std::fflush(stdout);
    failed += !v.pass;
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
