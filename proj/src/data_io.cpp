#include "gradcf/data_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <zlib.h>

#include "gradcf/error.hpp"

namespace gradcf::data {

std::vector<net::LabeledView> Dataset::views() const {
  std::vector<net::LabeledView> out;
  out.reserve(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) out.push_back({instances[i].span(), labels[i]});
  return out;
}

void Dataset::validate() const {
  if (instances.size() != labels.size()) {
    throw ValidationError("dataset has " + std::to_string(instances.size()) + " instances but " +
                          std::to_string(labels.size()) + " labels");
  }
  for (const FeatureVector& fv : instances) {
    fv.validate();
    if (fv.size() != feature_count()) throw ValidationError("dataset rows differ in length");
  }
}

namespace {

// RFC-4180 record splitter: quoted fields, doubled quotes, CRLF.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t");
  return s.substr(first, last - first + 1);
}

bool blank(const std::vector<std::string>& fields) {
  return std::all_of(fields.begin(), fields.end(), [](const std::string& f) { return trim(f).empty(); });
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column, Split split,
                 const std::vector<std::string>& known_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open CSV " + path.string());
  std::vector<std::string> header;
  if (!read_record(in, header) || blank(header)) throw ParseError(path.string() + ": empty file");
  for (auto& h : header) h = trim(h);
  const auto label_it = std::find(header.begin(), header.end(), label_column);
  if (label_it == header.end()) {
    throw ParseError(path.string() + ": missing label column '" + label_column + "'");
  }
  const auto label_idx = static_cast<std::size_t>(label_it - header.begin());

  Dataset ds;
  ds.split = split;
  ds.class_names = known_classes;
  std::unordered_map<std::string, std::size_t> class_of;
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) class_of.emplace(ds.class_names[i], i);

  std::vector<std::string> fields;
  std::size_t row = 0;
  while (read_record(in, fields)) {
    ++row;
    if (blank(fields)) continue;
    if (fields.size() != header.size()) {
      throw ParseError(path.string() + ": row " + std::to_string(row) + " has " +
                       std::to_string(fields.size()) + " cells, header has " +
                       std::to_string(header.size()));
    }
    std::vector<double> values;
    values.reserve(header.size() - 1);
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (c == label_idx) continue;
      const std::string cell = trim(fields[c]);
      double v = 0.0;
      std::size_t used = 0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (cell.empty() || used != cell.size() || !std::isfinite(v)) {
        throw ParseError(path.string() + ": non-numeric cell '" + cell + "' at row " +
                         std::to_string(row) + ", column '" + header[c] + "'");
      }
      values.push_back(v);
    }
    const std::string label = trim(fields[label_idx]);
    auto [it, inserted] = class_of.emplace(label, ds.class_names.size());
    if (inserted) ds.class_names.push_back(label);
    ds.instances.push_back(FeatureVector::flat(std::move(values)));
    ds.labels.push_back(it->second);
  }
  if (ds.empty()) throw ParseError(path.string() + ": no data rows");
  return ds;
}

Normalizer fit_normalizer(const Dataset& train) {
  if (train.empty()) throw ValidationError("cannot fit a normalizer on an empty dataset");
  const std::size_t d = train.feature_count();
  Normalizer norm{train.instances.front().values, train.instances.front().values};
  for (const FeatureVector& fv : train.instances) {
    if (fv.size() != d) throw DimensionError("dataset rows differ in length");
    for (std::size_t i = 0; i < d; ++i) {
      norm.min[i] = std::min(norm.min[i], fv.values[i]);
      norm.max[i] = std::max(norm.max[i], fv.values[i]);
    }
  }
  return norm;
}

Dataset apply_normalizer(Dataset ds, const Normalizer& norm) {
  for (FeatureVector& fv : ds.instances) fv.values = norm.apply(fv.values);
  ds.normalizer = norm;
  return ds;
}

namespace {

class GzReader {
 public:
  explicit GzReader(const std::filesystem::path& path) : path_(path) {
    file_ = gzopen(path.string().c_str(), "rb");
    if (file_ == nullptr) throw IoError("cannot open " + path.string());
  }
  ~GzReader() { gzclose(file_); }
  GzReader(const GzReader&) = delete;
  GzReader& operator=(const GzReader&) = delete;

  void read(void* dst, std::size_t n) {
    auto* out = static_cast<unsigned char*>(dst);
    while (n > 0) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      const int got = gzread(file_, out, chunk);
      if (got <= 0) throw ParseError(path_.string() + ": truncated payload");
      out += got;
      n -= static_cast<std::size_t>(got);
    }
  }

  std::uint32_t read_u32_be() {
    std::array<unsigned char, 4> b{};
    read(b.data(), b.size());
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
           std::uint32_t{b[3]};
  }

 private:
  std::filesystem::path path_;
  gzFile file_ = nullptr;
};

class ByteWriter {
 public:
  explicit ByteWriter(const std::filesystem::path& path) : path_(path) {
    gz_ = path.extension() == ".gz";
    if (gz_) {
      file_ = gzopen(path.string().c_str(), "wb");
      if (file_ == nullptr) throw IoError("cannot open " + path.string() + " for writing");
    } else {
      out_.open(path, std::ios::binary);
      if (!out_) throw IoError("cannot open " + path.string() + " for writing");
    }
  }
  ~ByteWriter() {
    if (gz_) gzclose(file_);
  }
  ByteWriter(const ByteWriter&) = delete;
  ByteWriter& operator=(const ByteWriter&) = delete;

  void write(const void* src, std::size_t n) {
    if (gz_) {
      if (n > 0 && gzwrite(file_, src, static_cast<unsigned>(n)) != static_cast<int>(n)) {
        throw IoError("failed writing " + path_.string());
      }
    } else {
      out_.write(static_cast<const char*>(src), static_cast<std::streamsize>(n));
      if (!out_) throw IoError("failed writing " + path_.string());
    }
  }

  void write_u32_be(std::uint32_t v) {
    const std::array<unsigned char, 4> b{static_cast<unsigned char>(v >> 24),
                                         static_cast<unsigned char>(v >> 16),
                                         static_cast<unsigned char>(v >> 8),
                                         static_cast<unsigned char>(v)};
    write(b.data(), b.size());
  }

 private:
  std::filesystem::path path_;
  bool gz_ = false;
  gzFile file_ = nullptr;
  std::ofstream out_;
};

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 Split split, std::optional<std::size_t> limit) {
  GzReader img(images);
  GzReader lab(labels);
  if (const auto magic = img.read_u32_be(); magic != kImageMagic) {
    throw ParseError(images.string() + ": bad image magic " + std::to_string(magic));
  }
  if (const auto magic = lab.read_u32_be(); magic != kLabelMagic) {
    throw ParseError(labels.string() + ": bad label magic " + std::to_string(magic));
  }
  const std::size_t n_images = img.read_u32_be();
  const std::size_t rows = img.read_u32_be();
  const std::size_t cols = img.read_u32_be();
  const std::size_t n_labels = lab.read_u32_be();
  if (n_images != n_labels) {
    throw ParseError("count mismatch: " + std::to_string(n_images) + " images vs " +
                     std::to_string(n_labels) + " labels");
  }
  const std::size_t n = limit ? std::min(*limit, n_images) : n_images;
  const ImageShape shape{rows, cols};

  Dataset ds;
  ds.split = split;
  ds.instances.reserve(n);
  std::vector<unsigned char> pixels(shape.size());
  std::vector<unsigned char> label_bytes(n);
  lab.read(label_bytes.data(), label_bytes.size());
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    img.read(pixels.data(), pixels.size());
    std::vector<double> values(pixels.size());
    for (std::size_t p = 0; p < pixels.size(); ++p) values[p] = pixels[p] / 255.0;
    ds.instances.push_back(FeatureVector::with_image(std::move(values), shape));
    ds.labels.push_back(label_bytes[i]);
    max_label = std::max<std::size_t>(max_label, label_bytes[i]);
  }
  for (std::size_t k = 0; k <= std::max<std::size_t>(max_label, 9); ++k) {
    ds.class_names.push_back(std::to_string(k));
  }
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images,
               const std::filesystem::path& labels) {
  ds.validate();
  if (ds.empty() || !ds.instances.front().image) {
    throw ValidationError("write_idx needs a non-empty image dataset");
  }
  const ImageShape shape = *ds.instances.front().image;
  ByteWriter img(images);
  ByteWriter lab(labels);
  img.write_u32_be(kImageMagic);
  img.write_u32_be(static_cast<std::uint32_t>(ds.size()));
  img.write_u32_be(static_cast<std::uint32_t>(shape.height));
  img.write_u32_be(static_cast<std::uint32_t>(shape.width));
  lab.write_u32_be(kLabelMagic);
  lab.write_u32_be(static_cast<std::uint32_t>(ds.size()));
  std::vector<unsigned char> bytes(shape.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& v = ds.instances[i].values;
    for (std::size_t p = 0; p < v.size(); ++p) {
      bytes[p] = static_cast<unsigned char>(std::clamp(std::round(v[p] * 255.0), 0.0, 255.0));
    }
    img.write(bytes.data(), bytes.size());
    const auto label = static_cast<unsigned char>(ds.labels[i]);
    lab.write(&label, 1);
  }
}

std::pair<Dataset, Dataset> synth_gaussian(const SynthSpec& spec) {
  if (spec.d < 1) throw RangeError("synth_gaussian needs d >= 1");
  if (spec.classes < 2) throw RangeError("synth_gaussian needs at least two classes");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> noise(0.0, 1.0);

  auto make = [&](Split split) {
    Dataset ds;
    ds.split = split;
    for (std::size_t k = 0; k < spec.classes; ++k) ds.class_names.push_back(std::to_string(k));
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      for (std::size_t k = 0; k < spec.classes; ++k) {
        std::vector<double> v(spec.d);
        for (double& e : v) e = noise(rng);
        // classes beyond d reuse axes at growing distance
        const double reach = static_cast<double>(1 + k / spec.d);
        v[k % spec.d] += spec.separation * reach;
        ds.instances.push_back(FeatureVector::flat(std::move(v)));
        ds.labels.push_back(k);
      }
    }
    return ds;
  };
  Dataset train = make(Split::train);
  Dataset test = make(Split::test);
  const Normalizer norm = fit_normalizer(train);
  train = apply_normalizer(std::move(train), norm);
  test = apply_normalizer(std::move(test), norm);
  return {std::move(train), std::move(test)};
}

ReferenceLogitStats sample_reference_set(const Dataset& train, const net::NetworkModel& model,
                                         std::size_t target, std::size_t n, std::uint64_t seed,
                                         Membership membership) {
  if (target >= model.class_count()) {
    throw RangeError("target class " + std::to_string(target) + " outside [0, " +
                     std::to_string(model.class_count()) + ")");
  }
  const auto count = static_cast<std::ptrdiff_t>(train.size());
  std::vector<net::LogitVector> logits(train.size());
#pragma omp parallel for schedule(static) num_threads(kernels::max_threads())
  for (std::ptrdiff_t i = 0; i < count; ++i) {
    const auto u = static_cast<std::size_t>(i);
    logits[u] = net::forward(model, train.instances[u]);
  }
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const std::size_t cls = membership == Membership::predicted ? net::argmax(logits[i]) : train.labels[i];
    if (cls == target) pool.push_back(i);
  }
  if (pool.empty()) {
    throw ValidationError("no training instance is classified as target class " +
                          std::to_string(target));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(pool.size(), n));

  ReferenceLogitStats stats;
  stats.target = target;
  stats.requested = n;
  stats.count = pool.size();
  stats.sample_indices = pool;
  stats.mean_logits.assign(model.class_count(), 0.0);
  for (std::size_t idx : pool) {
    for (std::size_t k = 0; k < stats.mean_logits.size(); ++k) stats.mean_logits[k] += logits[idx][k];
    stats.sample_logits.push_back(logits[idx]);
    stats.samples.push_back(train.instances[idx]);
  }
  for (double& m : stats.mean_logits) m /= static_cast<double>(pool.size());
  return stats;
}

std::string pgm_bytes(const FeatureVector& image) {
  if (!image.image) throw DimensionError("PGM output needs an image-shaped vector");
  std::ostringstream out;
  out << "P5\n" << image.image->width << ' ' << image.image->height << "\n255\n";
  for (double v : image.values) {
    out.put(static_cast<char>(static_cast<unsigned char>(std::clamp(std::round(v * 255.0), 0.0, 255.0))));
  }
  return out.str();
}

void write_pgm(const FeatureVector& image, const std::filesystem::path& path) {
  const std::string bytes = pgm_bytes(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace gradcf::data
