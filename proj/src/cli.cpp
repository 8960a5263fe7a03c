#include "gradcf/cli.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>
#include <openssl/evp.h>

#include "gradcf/baselines.hpp"
#include "gradcf/data_io.hpp"
#include "gradcf/error.hpp"
#include "gradcf/gradual.hpp"
#include "gradcf/metrics.hpp"
#include "gradcf/tensor_net.hpp"

#ifndef GRADCF_DEFAULT_MNIST_DIR
#define GRADCF_DEFAULT_MNIST_DIR "data/mnist"
#endif

namespace gradcf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t seed_stream(std::uint64_t seed, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return metrics::instance_seed(seed ^ h, 0);
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for hashing");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return out.str();
}

namespace {

struct DataArgs {
  std::string data = "synth";
  std::string train_csv;
  std::string test_csv;
  std::string label = "label";
  std::size_t d = 10;
  std::size_t classes = 2;
  std::size_t n_per_class = 200;
  double separation = 6.0;
  std::string mnist_dir = GRADCF_DEFAULT_MNIST_DIR;
  std::size_t train_limit = 2000;
  std::size_t test_limit = 1000;
  CLI::Option* data_seed_opt = nullptr;
  std::uint64_t data_seed = 0;
};

void add_data_options(CLI::App& cmd, DataArgs& a, bool training) {
  cmd.add_option("--data", a.data, "synth, mnist, or a CSV path")->capture_default_str();
  if (training) {
    cmd.add_option("--test", a.test_csv, "held-out CSV (default: 20% split of --data)");
  } else {
    cmd.add_option("--train", a.train_csv, "training CSV for reference sampling (default: --data)");
  }
  cmd.add_option("--label", a.label, "CSV label column")->capture_default_str();
  cmd.add_option("--d", a.d, "synthetic feature count")->capture_default_str()->check(CLI::PositiveNumber);
  cmd.add_option("--classes", a.classes, "synthetic class count")->capture_default_str()->check(CLI::Range(2, 1 << 20));
  cmd.add_option("--n-per-class", a.n_per_class, "synthetic instances per class and split")->capture_default_str();
  cmd.add_option("--separation", a.separation, "synthetic class separation")->capture_default_str();
  cmd.add_option("--mnist-dir", a.mnist_dir, "directory holding MNIST IDX files")->capture_default_str();
  cmd.add_option("--train-limit", a.train_limit, "MNIST training images to use")->capture_default_str();
  cmd.add_option("--test-limit", a.test_limit, "MNIST test images to use")->capture_default_str();
  a.data_seed_opt = cmd.add_option("--data-seed", a.data_seed, "seed for synthetic data (default: derived from --seed)");
}

struct Splits {
  data::Dataset train;
  data::Dataset test;
  std::string name;
  bool image = false;
};

fs::path idx_file(const fs::path& dir, const std::string& stem) {
  for (const std::string& suffix : {std::string(), std::string(".gz")}) {
    const fs::path p = dir / (stem + suffix);
    if (fs::exists(p)) return p;
  }
  throw IoError("cannot find " + stem + "[.gz] under " + dir.string());
}

std::uint64_t data_seed(const DataArgs& a, std::uint64_t seed) {
  return a.data_seed_opt->count() > 0 ? a.data_seed : seed_stream(seed, "data");
}

Splits load_synth_or_mnist(const DataArgs& a, std::uint64_t seed) {
  Splits s;
  if (a.data == "synth") {
    auto [train, test] = data::synth_gaussian({a.d, a.classes, a.n_per_class, a.separation, data_seed(a, seed)});
    s.train = std::move(train);
    s.test = std::move(test);
    s.name = "synth";
  } else {
    const fs::path dir(a.mnist_dir);
    s.train = data::load_idx(idx_file(dir, "train-images-idx3-ubyte"), idx_file(dir, "train-labels-idx1-ubyte"),
                             data::Split::train, a.train_limit);
    s.test = data::load_idx(idx_file(dir, "t10k-images-idx3-ubyte"), idx_file(dir, "t10k-labels-idx1-ubyte"),
                            data::Split::test, a.test_limit);
    s.name = "mnist";
    s.image = true;
  }
  return s;
}

bool builtin(const DataArgs& a) { return a.data == "synth" || a.data == "mnist"; }

Splits load_for_training(const DataArgs& a, std::uint64_t seed) {
  if (builtin(a)) return load_synth_or_mnist(a, seed);
  Splits s;
  s.name = fs::path(a.data).stem().string();
  data::Dataset full = data::load_csv(a.data, a.label, data::Split::train);
  if (!a.test_csv.empty()) {
    s.train = std::move(full);
    s.test = data::load_csv(a.test_csv, a.label, data::Split::test, s.train.class_names);
    s.train.class_names = s.test.class_names;
  } else {
    std::vector<std::size_t> order(full.size());
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(data_seed(a, seed));
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t n_train = std::max<std::size_t>(1, full.size() * 4 / 5);
    s.train.split = data::Split::train;
    s.test.split = data::Split::test;
    s.train.class_names = s.test.class_names = full.class_names;
    for (std::size_t i = 0; i < order.size(); ++i) {
      data::Dataset& dst = i < n_train ? s.train : s.test;
      dst.instances.push_back(full.instances[order[i]]);
      dst.labels.push_back(full.labels[order[i]]);
    }
  }
  const net::Normalizer norm = data::fit_normalizer(s.train);
  s.train = data::apply_normalizer(std::move(s.train), norm);
  s.test = data::apply_normalizer(std::move(s.test), norm);
  return s;
}

// The dataset to explain goes in `test`, the reference pool in `train`.
Splits load_for_model(const DataArgs& a, std::uint64_t seed, const net::NetworkModel& model) {
  if (builtin(a)) return load_synth_or_mnist(a, seed);
  Splits s;
  s.name = fs::path(a.data).stem().string();
  s.test = data::load_csv(a.data, a.label, data::Split::test, model.class_names);
  s.train = data::load_csv(a.train_csv.empty() ? a.data : a.train_csv, a.label, data::Split::train,
                           model.class_names);
  if (model.norm) {
    s.test = data::apply_normalizer(std::move(s.test), *model.norm);
    s.train = data::apply_normalizer(std::move(s.train), *model.norm);
  }
  return s;
}

std::vector<std::size_t> parse_widths(const std::string& text) {
  std::vector<std::size_t> widths;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part.empty()) continue;
    std::size_t used = 0;
    const unsigned long v = std::stoul(part, &used);
    if (used != part.size() || v == 0) throw RangeError("bad layer width '" + part + "'");
    widths.push_back(v);
  }
  return widths;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (!part.empty()) out.push_back(part);
  }
  return out;
}

struct ExplainArgs {
  double tau = 0.5;
  std::size_t sigma = 500;
  double lambda = 0.3;
  double eta = 0.3;
  double beta = 2.0;
  std::size_t reference_count = 100;
  double lr = 0.1;
  std::string block = "4x4";
  std::string objective = "gradual";
  std::string scope = "masked";
  std::string rank_mode = "static";
  std::string rank_gradient = "probability";
  std::string logit_norm = "vector";
  std::string membership = "predicted";
  bool clamp = false;
  bool cold_start = false;
  std::size_t max_outer = 0;
  std::map<std::string, CLI::Option*> opts;

  bool given(const std::string& name) const {
    const auto it = opts.find(name);
    return it != opts.end() && it->second->count() > 0;
  }
};

void add_explain_options(CLI::App& cmd, ExplainArgs& a, bool with_objective) {
  a.opts["tau"] = cmd.add_option("--tau", a.tau, "target probability (default 0.5 tabular, 0.9 image)");
  a.opts["sigma"] = cmd.add_option("--sigma", a.sigma, "Adam steps per composition step (default 500 / 1000 image)");
  a.opts["lambda"] = cmd.add_option("--lambda", a.lambda, "proximity weight (default 0.3)");
  a.opts["eta"] = cmd.add_option("--eta", a.eta, "total-variation weight for images (default 0.3)");
  a.opts["beta"] = cmd.add_option("--beta", a.beta, "total-variation exponent (default 2)");
  a.opts["N"] = cmd.add_option("--reference-count,-N", a.reference_count, "reference samples (default 100)");
  a.opts["lr"] = cmd.add_option("--lr", a.lr, "Adam learning rate (default 0.1)");
  a.opts["block"] = cmd.add_option("--block", a.block, "image block HxW, or 'none' (default 4x4)");
  if (with_objective) {
    a.opts["objective"] = cmd.add_option("--objective", a.objective, "gradual, wachter or ablation")
                              ->check(CLI::IsMember({"gradual", "wachter", "ablation"}));
  }
  a.opts["scope"] = cmd.add_option("--scope", a.scope, "wachter perturbation scope: masked or full")
                        ->check(CLI::IsMember({"masked", "full"}));
  cmd.add_option("--rank-mode", a.rank_mode, "static or recompute")->check(CLI::IsMember({"static", "recompute"}))->capture_default_str();
  cmd.add_option("--rank-gradient", a.rank_gradient, "probability or logit")->check(CLI::IsMember({"probability", "logit"}))->capture_default_str();
  cmd.add_option("--logit-norm", a.logit_norm, "vector or scalar_sum")->check(CLI::IsMember({"vector", "scalar_sum"}))->capture_default_str();
  cmd.add_option("--membership", a.membership, "reference membership: predicted or labeled")->check(CLI::IsMember({"predicted", "labeled"}))->capture_default_str();
  cmd.add_flag("--clamp", a.clamp, "project the composite onto feature bounds");
  cmd.add_flag("--cold-start", a.cold_start, "redraw the composite before every composition step");
  a.opts["max_outer"] = cmd.add_option("--max-outer", a.max_outer, "outer iteration cap (default: unit count)")->check(CLI::PositiveNumber);
}

explain::BlockSize parse_block(const std::string& text) {
  const auto x = text.find('x');
  if (x == std::string::npos) throw RangeError("block must look like 4x4");
  return {std::stoul(text.substr(0, x)), std::stoul(text.substr(x + 1))};
}

explain::ExplainConfig resolve_config(const ExplainArgs& a, bool image, std::uint64_t seed) {
  explain::ExplainConfig c = image ? explain::ExplainConfig::image() : explain::ExplainConfig::tabular();
  if (a.given("tau")) c.tau = a.tau;
  if (a.given("sigma")) c.sigma = a.sigma;
  if (a.given("lambda")) c.lambda = a.lambda;
  if (a.given("eta")) c.eta = a.eta;
  if (a.given("beta")) c.beta = a.beta;
  if (a.given("N")) c.reference_count = a.reference_count;
  if (a.given("lr")) c.adam.lr = a.lr;
  if (a.given("block")) {
    c.block = a.block == "none" ? std::nullopt : std::optional(parse_block(a.block));
  }
  c.objective = explain::parse_objective(a.objective);
  c.scope = a.scope == "full" ? explain::Scope::full : explain::Scope::masked;
  c.rank_mode = explain::parse_rank_mode(a.rank_mode);
  c.rank_gradient = a.rank_gradient == "logit" ? net::GradientOf::logit : net::GradientOf::probability;
  c.logit_norm = a.logit_norm == "scalar_sum" ? explain::LogitNorm::scalar_sum : explain::LogitNorm::vector;
  c.clamp = a.clamp;
  c.warm_start = !a.cold_start;
  if (a.given("max_outer")) c.max_outer = a.max_outer;
  c.seed = seed_stream(seed, "composite");
  c.validate();
  return c;
}

data::Membership membership(const ExplainArgs& a) {
  return a.membership == "labeled" ? data::Membership::labeled : data::Membership::predicted;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

struct Manifest {
  std::string command;
  std::vector<std::string> args;
  json config = json::object();
  json seeds = json::object();
  json inputs = json::object();
  std::vector<fs::path> outputs;

  void write(const fs::path& dir) const {
    json out = json::object();
    for (const fs::path& p : outputs) out[p.filename().string()] = sha256_file(p.string());
    const json j{{"command", command}, {"args", args},     {"config", config},
                 {"seeds", seeds},     {"inputs", inputs}, {"outputs", out},
                 {"created", utc_now()}};
    write_text(dir / "manifest.json", j.dump(2) + "\n");
  }
};

fs::path prepare_dir(const std::string& dir) {
  fs::path p(dir.empty() ? "." : dir);
  fs::create_directories(p);
  return p;
}

data::ReferenceLogitStats reference_for(const Splits& splits, const net::NetworkModel& model, std::size_t target,
                                        const explain::ExplainConfig& config, std::uint64_t seed,
                                        data::Membership m) {
  return data::sample_reference_set(splits.train, model, target, config.reference_count,
                                    metrics::instance_seed(seed_stream(seed, "sampling"), target), m);
}

std::string fmt(double v) {
  std::ostringstream out;
  out << std::setprecision(17) << v;
  return out.str();
}

// --- train -----------------------------------------------------------------

struct TrainArgs {
  DataArgs data;
  std::string hidden;
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  std::string out;
  std::string out_dir;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& args) {
  const Splits splits = load_for_training(a.data, a.seed);
  std::vector<std::size_t> widths{splits.train.feature_count()};
  const std::string hidden = !a.hidden.empty() ? a.hidden : (splits.image ? "64,32" : "32,16");
  for (std::size_t w : parse_widths(hidden)) widths.push_back(w);
  widths.push_back(std::max(splits.train.class_names.size(), splits.test.class_names.size()));

  net::NetworkModel model = net::make_mlp(widths, seed_stream(a.seed, "init"));
  if (splits.image) model.input_shape = splits.train.instances.front().image;
  if (splits.train.normalizer) model.norm = splits.train.normalizer;
  model.class_names = splits.train.class_names;
  model.class_names.resize(model.class_count());

  const auto train_views = splits.train.views();
  const auto test_views = splits.test.views();
  const net::TrainReport report =
      net::train(model, train_views, test_views,
                 {a.epochs, a.batch_size, a.lr, seed_stream(a.seed, "data") ^ 0x5eedULL});
  const fs::path out(a.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  net::save_model(model, out);

  std::cout << "train_accuracy " << fmt(report.train_accuracy) << "\n";
  if (report.test_accuracy) std::cout << "test_accuracy " << fmt(*report.test_accuracy) << "\n";
  std::cout << "model " << out.string() << "\n";

  Manifest m;
  m.command = "train";
  m.args = args;
  json widths_json = widths;
  m.config = {{"layers", widths_json}, {"epochs", a.epochs}, {"batch_size", a.batch_size}, {"lr", a.lr},
              {"dataset", splits.name}, {"train_size", splits.train.size()}, {"test_size", splits.test.size()},
              {"train_accuracy", report.train_accuracy},
              {"test_accuracy", report.test_accuracy ? json(*report.test_accuracy) : json(nullptr)}};
  m.seeds = {{"seed", a.seed}, {"init", seed_stream(a.seed, "init")}, {"data", data_seed(a.data, a.seed)}};
  m.inputs = {{"data", a.data.data}};
  m.outputs = {out};
  const fs::path dir = a.out_dir.empty() ? (out.has_parent_path() ? out.parent_path() : fs::path(".")) : prepare_dir(a.out_dir);
  m.write(dir);
  return kOk;
}

// --- explain ---------------------------------------------------------------

struct ExplainCmdArgs {
  DataArgs data;
  ExplainArgs ex;
  std::string model;
  std::string split = "test";
  std::size_t row = 0;
  std::string vector;
  std::size_t target = 0;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

FeatureVector pick_instance(const ExplainCmdArgs& a, const Splits& splits, const net::NetworkModel& model) {
  if (!a.vector.empty()) {
    std::vector<double> values;
    for (const std::string& part : split_list(a.vector)) values.push_back(std::stod(part));
    FeatureVector fv = model.input_shape ? FeatureVector::with_image(std::move(values), *model.input_shape)
                                         : FeatureVector::flat(std::move(values));
    return fv;
  }
  const data::Dataset& ds = a.split == "train" ? splits.train : splits.test;
  if (a.row >= ds.size()) {
    throw RangeError("row " + std::to_string(a.row) + " outside a " + std::to_string(ds.size()) + "-row dataset");
  }
  return ds.instances[a.row];
}

int cmd_explain(const ExplainCmdArgs& a, const std::vector<std::string>& args) {
  const net::NetworkModel model = net::load_model(a.model);
  if (a.target >= model.class_count()) {
    throw RangeError("target class " + std::to_string(a.target) + " outside [0, " +
                     std::to_string(model.class_count()) + ")");
  }
  const Splits splits = load_for_model(a.data, a.seed, model);
  const FeatureVector x = pick_instance(a, splits, model);
  if (x.size() != model.input_width()) {
    throw DimensionError("instance has " + std::to_string(x.size()) + " features, model expects " +
                         std::to_string(model.input_width()));
  }
  const explain::ExplainConfig config = resolve_config(a.ex, x.is_image(), a.seed);
  const data::ReferenceLogitStats ref = reference_for(splits, model, a.target, config, a.seed, membership(a.ex));
  const explain::ExplainSession session = explain::run(model, x, a.target, ref, config);

  const fs::path dir = prepare_dir(a.out_dir);
  json sj = explain::session_to_json(session, &model);
  sj["reference"] = {{"requested", ref.requested}, {"count", ref.count}, {"mean_logits", ref.mean_logits}};
  Manifest m;
  m.outputs.push_back(dir / "session.json");
  write_text(m.outputs.back(), sj.dump(2) + "\n");
  if (x.is_image()) {
    m.outputs.push_back(dir / "original.pgm");
    data::write_pgm(session.original, m.outputs.back());
    m.outputs.push_back(dir / "counterfactual.pgm");
    data::write_pgm(session.counterfactual, m.outputs.back());
  }
  m.command = "explain";
  m.args = args;
  m.config = explain::to_json(config);
  m.seeds = {{"seed", a.seed}, {"composite", config.seed}, {"data", data_seed(a.data, a.seed)}};
  m.inputs = {{"model", a.model}, {"data", a.data.data}, {"row", a.row}, {"split", a.split}};
  m.write(dir);

  std::cout << "outcome " << explain::to_string(session.outcome) << "\n"
            << "masked_units " << session.masked_units() << "\n"
            << "target_prob " << fmt(session.final_prob()) << "\n";
  if (ref.shortfall()) {
    std::cerr << "warning: only " << ref.count << " of " << ref.requested
              << " reference samples are classified as class " << a.target << "\n";
  }
  return session.outcome == explain::Outcome::success ? kOk : kBudgetExhausted;
}

// --- evaluate / ablate -------------------------------------------------------

struct EvalArgs {
  DataArgs data;
  ExplainArgs ex;
  std::string model;
  std::size_t n = 100;
  std::string objectives = "gradual";
  std::size_t epsilon = 3;
  CLI::Option* target_opt = nullptr;
  std::size_t target = 0;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

struct EvalContext {
  net::NetworkModel model;
  Splits splits;
  std::vector<std::size_t> instances;
  metrics::TargetPolicy policy;
  std::map<std::size_t, data::ReferenceLogitStats> refs;
};

EvalContext prepare_eval(const EvalArgs& a) {
  EvalContext ctx;
  ctx.model = net::load_model(a.model);
  ctx.splits = load_for_model(a.data, a.seed, ctx.model);
  const bool fixed = a.target_opt->count() > 0;
  if (fixed && a.target >= ctx.model.class_count()) {
    throw RangeError("target class " + std::to_string(a.target) + " outside [0, " +
                     std::to_string(ctx.model.class_count()) + ")");
  }
  ctx.policy = fixed ? metrics::fixed_target_policy(a.target) : metrics::next_class_policy(ctx.model.class_count());
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < ctx.splits.test.size(); ++i) {
    if (fixed && net::predict(ctx.model, ctx.splits.test.instances[i].span()) == a.target) continue;
    candidates.push_back(i);
  }
  std::mt19937_64 rng(seed_stream(a.seed, "sampling"));
  std::shuffle(candidates.begin(), candidates.end(), rng);
  candidates.resize(std::min(candidates.size(), a.n));
  std::sort(candidates.begin(), candidates.end());
  if (candidates.empty()) throw ValidationError("no test instances to evaluate");
  ctx.instances = std::move(candidates);
  return ctx;
}

metrics::BatchResult run_objective(EvalContext& ctx, const EvalArgs& a, const std::string& objective,
                                   explain::Scope scope) {
  ExplainArgs ex = a.ex;
  ex.objective = objective;
  ex.scope = scope == explain::Scope::full ? "full" : "masked";
  const bool image = ctx.splits.test.instances.front().is_image();
  const explain::ExplainConfig config = resolve_config(ex, image, a.seed);
  const data::Membership m = membership(a.ex);
  metrics::ReferenceLookup lookup = [&](std::size_t target) -> const data::ReferenceLogitStats& {
    auto it = ctx.refs.find(target);
    if (it == ctx.refs.end()) {
      it = ctx.refs.emplace(target, reference_for(ctx.splits, ctx.model, target, config, a.seed, m)).first;
    }
    return it->second;
  };
  metrics::BatchOptions options{objective, ctx.splits.name, a.epsilon, config};
  return metrics::evaluate_batch(ctx.model, ctx.splits.test, ctx.instances, ctx.policy, lookup, options);
}

explain::Scope wachter_scope(const ExplainArgs& ex) {
  return ex.given("scope") && ex.scope == "masked" ? explain::Scope::masked : explain::Scope::full;
}

int cmd_evaluate(const EvalArgs& a, const std::vector<std::string>& args) {
  EvalContext ctx = prepare_eval(a);
  const fs::path dir = prepare_dir(a.out_dir);
  std::string csv = metrics::report_csv_header() + "\n";
  json reports = json::array();
  json configs = json::object();
  for (const std::string& objective : split_list(a.objectives)) {
    explain::parse_objective(objective);
    const explain::Scope scope = objective == "wachter" ? wachter_scope(a.ex) : explain::Scope::masked;
    const metrics::BatchResult result = run_objective(ctx, a, objective, scope);
    csv += metrics::report_csv_row(result.report) + "\n";
    json rj = metrics::report_to_json(result.report);
    rj["scope"] = explain::to_string(scope);
    reports.push_back(std::move(rj));
    configs[objective] = explain::to_json(result.sessions.front().config);
    std::cout << metrics::report_csv_row(result.report) << "\n";
  }
  Manifest m;
  m.outputs = {dir / "report.csv", dir / "report.json"};
  write_text(m.outputs[0], csv);
  write_text(m.outputs[1], json{{"reports", reports}, {"instances", ctx.instances}}.dump(2) + "\n");
  m.command = "evaluate";
  m.args = args;
  m.config = {{"objectives", configs}, {"n", a.n}, {"epsilon", a.epsilon}};
  m.seeds = {{"seed", a.seed}, {"sampling", seed_stream(a.seed, "sampling")},
             {"composite", seed_stream(a.seed, "composite")}, {"data", data_seed(a.data, a.seed)}};
  m.inputs = {{"model", a.model}, {"data", a.data.data}};
  m.write(dir);
  return kOk;
}

json quartiles_json(const std::vector<metrics::Quartiles>& qs) {
  json out = json::array();
  for (const auto& q : qs) out.push_back({q.min, q.q1, q.median, q.q3, q.max});
  return out;
}

int cmd_ablate(const EvalArgs& a, const std::vector<std::string>& args) {
  EvalContext ctx = prepare_eval(a);
  const metrics::BatchResult gradual = run_objective(ctx, a, "gradual", explain::Scope::masked);
  const metrics::BatchResult ablation = run_objective(ctx, a, "ablation", explain::Scope::masked);

  std::ostringstream csv;
  csv << "index,target,gradual_outcome,ablation_outcome,gradual_logit_dist,ablation_logit_dist,gradual_lower\n";
  std::size_t both = 0;
  std::size_t lower = 0;
  json pairs = json::array();
  for (std::size_t i = 0; i < ctx.instances.size(); ++i) {
    const auto& g = gradual.report.rows[i];
    const auto& b = ablation.report.rows[i];
    const bool paired = g.outcome == explain::Outcome::success && b.outcome == explain::Outcome::success;
    const bool g_lower = g.logit_distance < b.logit_distance;
    both += paired ? 1 : 0;
    lower += paired && g_lower ? 1 : 0;
    csv << g.index << ',' << g.target << ',' << explain::to_string(g.outcome) << ','
        << explain::to_string(b.outcome) << ',' << fmt(g.logit_distance) << ',' << fmt(b.logit_distance) << ','
        << (g_lower ? 1 : 0) << '\n';
    pairs.push_back({{"index", g.index}, {"target", g.target}, {"gradual_logit_dist", g.logit_distance},
                     {"ablation_logit_dist", b.logit_distance}, {"both_success", paired}});
  }

  // Per-target logit box-plot data over successful sessions.
  json per_target = json::object();
  for (const auto& [target, ref] : ctx.refs) {
    json entry;
    for (const auto* batch : {&gradual, &ablation}) {
      std::vector<explain::ExplainSession> picked;
      for (const auto& s : batch->sessions) {
        if (s.target == target && s.outcome == explain::Outcome::success) picked.push_back(s);
      }
      if (picked.empty()) continue;
      const metrics::LogitDivergence div = metrics::logit_divergence(ctx.model, picked, ref);
      entry[explain::to_string(picked.front().objective)] = {{"mean_distance", div.mean_distance},
                                                             {"quartiles", quartiles_json(div.counterfactual)}};
      entry["reference"] = {{"quartiles", quartiles_json(div.reference)}, {"mean_logits", ref.mean_logits}};
    }
    per_target[std::to_string(target)] = entry;
  }

  const json summary{{"pairs", ctx.instances.size()},
                     {"both_success", both},
                     {"gradual_lower_fraction", both == 0 ? json(nullptr) : json(double(lower) / double(both))},
                     {"gradual_logit_dist_mean", gradual.report.logit_distance.mean},
                     {"ablation_logit_dist_mean", ablation.report.logit_distance.mean},
                     {"gradual_success_rate", gradual.report.success_rate},
                     {"ablation_success_rate", ablation.report.success_rate}};
  const fs::path dir = prepare_dir(a.out_dir);
  Manifest m;
  m.outputs = {dir / "ablation.csv", dir / "ablation.json"};
  write_text(m.outputs[0], csv.str());
  write_text(m.outputs[1], json{{"summary", summary}, {"pairs", pairs}, {"logits", per_target}}.dump(2) + "\n");
  m.command = "ablate";
  m.args = args;
  m.config = {{"gradual", explain::to_json(gradual.sessions.front().config)},
              {"ablation", explain::to_json(ablation.sessions.front().config)}, {"n", a.n}};
  m.seeds = {{"seed", a.seed}, {"sampling", seed_stream(a.seed, "sampling")},
             {"composite", seed_stream(a.seed, "composite")}, {"data", data_seed(a.data, a.seed)}};
  m.inputs = {{"model", a.model}, {"data", a.data.data}};
  m.write(dir);
  std::cout << summary.dump() << "\n";
  return kOk;
}

// --- generate ----------------------------------------------------------------

struct GenerateArgs {
  DataArgs data;
  ExplainArgs ex;
  std::string model;
  std::size_t target = 0;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
};

int cmd_generate(const GenerateArgs& a, const std::vector<std::string>& args) {
  const net::NetworkModel model = net::load_model(a.model);
  if (!model.input_shape) throw DimensionError("generate needs an image-shaped model");
  if (a.target >= model.class_count()) {
    throw RangeError("target class " + std::to_string(a.target) + " outside [0, " +
                     std::to_string(model.class_count()) + ")");
  }
  const Splits splits = load_for_model(a.data, a.seed, model);
  explain::ExplainConfig config = resolve_config(a.ex, true, a.seed);
  config.lambda = 0.0;
  const data::ReferenceLogitStats ref = reference_for(splits, model, a.target, config, a.seed, membership(a.ex));
  const FeatureVector black =
      FeatureVector::with_image(std::vector<double>(model.input_width(), 0.0), *model.input_shape);
  const explain::ExplainSession session = explain::generate_from_seed(model, black, a.target, ref, config);

  const fs::path dir = prepare_dir(a.out_dir);
  Manifest m;
  m.outputs = {dir / "generated.pgm", dir / "session.json"};
  data::write_pgm(session.counterfactual, m.outputs[0]);
  write_text(m.outputs[1], explain::session_to_json(session, &model).dump(2) + "\n");
  m.command = "generate";
  m.args = args;
  m.config = explain::to_json(session.config);
  m.seeds = {{"seed", a.seed}, {"composite", config.seed}, {"sampling", seed_stream(a.seed, "sampling")}};
  m.inputs = {{"model", a.model}, {"data", a.data.data}};
  m.write(dir);
  std::cout << "outcome " << explain::to_string(session.outcome) << "\n"
            << "predicted_class " << net::predict(model, session.counterfactual.span()) << "\n";
  return session.outcome == explain::Outcome::success ? kOk : kBudgetExhausted;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Counterfactual explanations by gradual construction"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train an MLP classifier and write a model file");
  add_data_options(*train_cmd, train.data, true);
  train_cmd->add_option("--hidden", train.hidden, "hidden widths, e.g. 64,32");
  train_cmd->add_option("--epochs", train.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", train.batch_size)->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", train.lr, "training learning rate")->capture_default_str();
  train_cmd->add_option("--seed", train.seed)->capture_default_str();
  train_cmd->add_option("--out", train.out, "model JSON path")->required();
  train_cmd->add_option("--out-dir", train.out_dir, "manifest directory (default: next to --out)");

  ExplainCmdArgs explain_args;
  CLI::App* explain_cmd = app.add_subcommand("explain", "explain one instance");
  add_data_options(*explain_cmd, explain_args.data, false);
  add_explain_options(*explain_cmd, explain_args.ex, true);
  explain_cmd->add_option("--model", explain_args.model)->required();
  explain_cmd->add_option("--target", explain_args.target, "target class")->required();
  explain_cmd->add_option("--row", explain_args.row, "row of the dataset to explain")->capture_default_str();
  explain_cmd->add_option("--split", explain_args.split, "train or test (synth/mnist)")
      ->check(CLI::IsMember({"train", "test"}))->capture_default_str();
  explain_cmd->add_option("--vector", explain_args.vector, "inline comma-separated instance (normalized)");
  explain_cmd->add_option("--seed", explain_args.seed)->capture_default_str();
  explain_cmd->add_option("--out-dir", explain_args.out_dir)->capture_default_str();

  EvalArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "metrics over random test instances");
  add_data_options(*eval_cmd, eval_args.data, false);
  add_explain_options(*eval_cmd, eval_args.ex, false);
  eval_cmd->add_option("--model", eval_args.model)->required();
  eval_cmd->add_option("--n", eval_args.n, "instances to explain")->capture_default_str()->check(CLI::PositiveNumber);
  eval_cmd->add_option("--objectives", eval_args.objectives, "comma list of gradual,wachter,ablation")->capture_default_str();
  eval_cmd->add_option("--epsilon", eval_args.epsilon, "coherence neighbourhood size in changed features")->capture_default_str();
  eval_args.target_opt = eval_cmd->add_option("--target", eval_args.target, "fixed target class (default: next class)");
  eval_cmd->add_option("--seed", eval_args.seed)->capture_default_str();
  eval_cmd->add_option("--out-dir", eval_args.out_dir)->capture_default_str();

  EvalArgs ablate_args;
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "gradual vs probability-only objective, paired");
  add_data_options(*ablate_cmd, ablate_args.data, false);
  add_explain_options(*ablate_cmd, ablate_args.ex, false);
  ablate_cmd->add_option("--model", ablate_args.model)->required();
  ablate_cmd->add_option("--n", ablate_args.n)->capture_default_str()->check(CLI::PositiveNumber);
  ablate_args.target_opt = ablate_cmd->add_option("--target", ablate_args.target, "fixed target class");
  ablate_cmd->add_option("--epsilon", ablate_args.epsilon)->capture_default_str();
  ablate_cmd->add_option("--seed", ablate_args.seed)->capture_default_str();
  ablate_cmd->add_option("--out-dir", ablate_args.out_dir)->capture_default_str();

  GenerateArgs gen_args;
  gen_args.data.data = "mnist";
  CLI::App* gen_cmd = app.add_subcommand("generate", "grow an image of the target class from a black seed");
  add_data_options(*gen_cmd, gen_args.data, false);
  add_explain_options(*gen_cmd, gen_args.ex, false);
  gen_cmd->add_option("--model", gen_args.model)->required();
  gen_cmd->add_option("--target", gen_args.target)->required();
  gen_cmd->add_option("--seed", gen_args.seed)->capture_default_str();
  gen_cmd->add_option("--out-dir", gen_args.out_dir)->capture_default_str();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  if (!reversed.empty()) reversed.pop_back();
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (train_cmd->parsed()) return cmd_train(train, args);
    if (explain_cmd->parsed()) return cmd_explain(explain_args, args);
    if (eval_cmd->parsed()) return cmd_evaluate(eval_args, args);
    if (ablate_cmd->parsed()) return cmd_ablate(ablate_args, args);
    if (gen_cmd->parsed()) return cmd_generate(gen_args, args);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
  return kUsage;
}

}  // namespace gradcf::cli
