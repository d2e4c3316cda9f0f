#include "great/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include "great/errors.hpp"
#include "great/io.hpp"
#include "great/random.hpp"

namespace great::data {

std::string to_string(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

Shape Dataset::sample_shape() const {
  Shape s = features.shape();
  s.erase(s.begin());
  return s;
}

std::vector<std::size_t> Dataset::indices(Split which) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == which) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> Dataset::labeled_train() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < split.size(); ++i) {
    if (split[i] == Split::Train && labeled[i]) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  const std::size_t n = labels.size();
  if (n == 0 || features.rows() != n || labeled.size() != n || split.size() != n) {
    throw ContractError("dataset arrays disagree in length");
  }
  if (class_count == 0) throw ContractError("dataset has no classes");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= class_count) {
      throw ContractError("dataset label " + std::to_string(y) + " outside class range");
    }
  }
  for (double v : features.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ContractError("dataset feature outside [0, 1]");
  }
}

Subset take(const Dataset& dataset, const std::vector<std::size_t>& index) {
  Subset s;
  s.index = index;
  if (index.empty()) return s;
  s.x = dataset.features.select_rows(index);
  s.y.reserve(index.size());
  for (auto i : index) s.y.push_back(dataset.labels.at(i));
  return s;
}

Subset take(const Dataset& dataset, Split which) { return take(dataset, dataset.indices(which)); }

namespace {

std::vector<std::vector<std::size_t>> by_class(const std::vector<int>& labels, std::size_t classes,
                                               const std::vector<std::size_t>& pool) {
  std::vector<std::vector<std::size_t>> groups(classes);
  for (auto i : pool) groups[static_cast<std::size_t>(labels[i])].push_back(i);
  return groups;
}

std::size_t rounded(double x) { return static_cast<std::size_t>(std::llround(x)); }

// Min-max scales each column of an [n x d] tensor in place.
void minmax_columns(Tensor& x, std::vector<double>& offset, std::vector<double>& range) {
  const std::size_t n = x.rows(), d = x.row_size();
  offset.assign(d, 0.0);
  range.assign(d, 1.0);
  for (std::size_t j = 0; j < d; ++j) {
    double lo = x[j], hi = x[j];
    for (std::size_t i = 1; i < n; ++i) {
      lo = std::min(lo, x[i * d + j]);
      hi = std::max(hi, x[i * d + j]);
    }
    offset[j] = lo;
    range[j] = hi > lo ? hi - lo : 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      x[i * d + j] = std::clamp((x[i * d + j] - lo) / range[j], 0.0, 1.0);
    }
  }
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

}  // namespace

void assign_splits(Dataset& dataset, std::uint64_t seed, const SplitRatios& ratios) {
  if (!(ratios.train > 0.0 && ratios.val >= 0.0 && ratios.train + ratios.val <= 1.0)) {
    throw ConfigError("split ratios must satisfy train > 0, val >= 0, train + val <= 1");
  }
  Rng rng(derive_seed(seed, 0x5B1));
  dataset.split.assign(dataset.size(), Split::Test);
  for (auto& group : by_class(dataset.labels, dataset.class_count, iota(dataset.size()))) {
    rng.shuffle(std::span<std::size_t>(group));
    const std::size_t n_train = rounded(ratios.train * static_cast<double>(group.size()));
    const std::size_t n_val =
        std::min(group.size() - n_train, rounded(ratios.val * static_cast<double>(group.size())));
    for (std::size_t i = 0; i < group.size(); ++i) {
      dataset.split[group[i]] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::Test);
    }
  }
}

Dataset make_two_moons(std::size_t n, double noise_sd, std::uint64_t seed) {
  if (n < 10) throw ConfigError("make_two_moons: n must be >= 10");
  if (!(noise_sd >= 0.0)) throw ConfigError("make_two_moons: noise must be >= 0");
  Rng rng(derive_seed(seed, 0x7033));
  const std::size_t upper = n - n / 2;
  Tensor x({n, 2}, 0.0);
  Dataset d;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = rng.uniform(0.0, std::numbers::pi);
    const bool first = i < upper;
    double px = first ? std::cos(t) : 1.0 - std::cos(t);
    double py = first ? std::sin(t) : 0.5 - std::sin(t);
    if (noise_sd > 0.0) {
      px += noise_sd * rng.normal();
      py += noise_sd * rng.normal();
    }
    x.at(i, 0) = px;
    x.at(i, 1) = py;
    d.labels[i] = first ? 0 : 1;
  }
  minmax_columns(x, d.feature_offset, d.feature_range);
  d.features = std::move(x);
  d.class_count = 2;
  d.labeled.assign(n, 1);
  assign_splits(d, seed);
  return d;
}

Dataset make_blobs(std::size_t n, std::size_t classes, double spread, std::uint64_t seed) {
  if (n < 10) throw ConfigError("make_blobs: n must be >= 10");
  if (classes < 2 || classes > n) throw ConfigError("make_blobs: need 2 <= classes <= n");
  if (!(spread >= 0.0)) throw ConfigError("make_blobs: spread must be >= 0");
  Rng rng(derive_seed(seed, 0xB10B));
  Tensor x({n, 2}, 0.0);
  Dataset d;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    x.at(i, 0) = std::cos(angle) + spread * rng.normal();
    x.at(i, 1) = std::sin(angle) + spread * rng.normal();
    d.labels[i] = static_cast<int>(c);
  }
  minmax_columns(x, d.feature_offset, d.feature_range);
  d.features = std::move(x);
  d.class_count = classes;
  d.labeled.assign(n, 1);
  assign_splits(d, seed);
  return d;
}

Dataset subsample_labels(const Dataset& dataset, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("label fraction must be in (0, 1]");
  Dataset out = dataset;
  const auto train = dataset.indices(Split::Train);
  Rng rng(derive_seed(seed, 0x1AB));
  for (auto i : train) out.labeled[i] = 0;
  const auto groups = by_class(dataset.labels, dataset.class_count, train);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    auto group = groups[c];
    if (group.empty()) continue;
    const std::size_t keep = rounded(fraction * static_cast<double>(group.size()));
    if (keep == 0) {
      throw ConfigError("label fraction " + io::format_double(fraction) + " leaves class " +
                        std::to_string(c) + " without labeled samples");
    }
    rng.shuffle(std::span<std::size_t>(group));
    for (std::size_t i = 0; i < keep; ++i) out.labeled[group[i]] = 1;
  }
  return out;
}

Tensor resize_nearest(const Tensor& images, std::size_t height, std::size_t width) {
  if (images.rank() != 4) throw DimensionError("resize_nearest: expected [n,h,w,c], got " +
                                               shape_string(images.shape()));
  if (height == 0 || width == 0) throw DimensionError("resize_nearest: zero target size");
  const std::size_t n = images.dim(0), h = images.dim(1), w = images.dim(2), c = images.dim(3);
  if (h == height && w == width) return images;
  Tensor out({n, height, width, c}, 0.0);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t y = 0; y < height; ++y) {
      const std::size_t sy = y * h / height;
      for (std::size_t x = 0; x < width; ++x) {
        const std::size_t sx = x * w / width;
        for (std::size_t ch = 0; ch < c; ++ch) {
          out[((b * height + y) * width + x) * c + ch] = images[((b * h + sy) * w + sx) * c + ch];
        }
      }
    }
  }
  return out;
}

namespace {

class ByteCursor {
 public:
  ByteCursor(std::string bytes, std::string name) : bytes_(std::move(bytes)), name_(std::move(name)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(bytes_[pos_++]);
  }

  std::uint32_t u32_be() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<std::uint8_t>(bytes_[pos_++]);
    return v;
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what, std::size_t at) const {
    throw ParseError(name_ + ": " + what + " at byte offset " + std::to_string(at));
  }

 private:
  void need(std::size_t k) const {
    if (bytes_.size() - pos_ < k) fail("unexpected end of file", pos_);
  }

  std::string bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

// Reads an IDX ubyte header; returns dimension sizes.
std::vector<std::size_t> idx_header(ByteCursor& in) {
  const std::uint8_t z0 = in.u8(), z1 = in.u8();
  if (z0 != 0 || z1 != 0) in.fail("bad IDX magic", 0);
  const std::uint8_t type = in.u8();
  if (type != 0x08) in.fail("unsupported IDX element type (only ubyte)", 2);
  const std::uint8_t ndims = in.u8();
  if (ndims == 0) in.fail("IDX file declares zero dimensions", 3);
  std::vector<std::size_t> dims;
  for (std::uint8_t i = 0; i < ndims; ++i) {
    const std::size_t at = in.offset();
    const std::uint32_t d = in.u32_be();
    if (d == 0) in.fail("zero-sized IDX dimension", at);
    dims.push_back(d);
  }
  std::size_t total = 1;
  for (auto d : dims) total *= d;
  if (in.remaining() < total) in.fail("IDX payload shorter than declared dimensions", in.offset());
  if (in.remaining() > total) in.fail("IDX payload longer than declared dimensions", in.offset() + total);
  return dims;
}

}  // namespace

Dataset load_idx_images(const std::filesystem::path& images, const std::filesystem::path& labels,
                        const LoadOptions& options) {
  ByteCursor img(io::read_file(images), images.string());
  const auto dims = idx_header(img);
  if (dims.size() != 3 && dims.size() != 4) img.fail("image file must have 3 or 4 dimensions", 3);
  const std::size_t n = dims[0], h = dims[1], w = dims[2], c = dims.size() == 4 ? dims[3] : 1;
  Tensor x({n, h, w, c}, 0.0);
  for (double& v : x.values()) v = static_cast<double>(img.u8()) / 255.0;

  ByteCursor lab(io::read_file(labels), labels.string());
  const auto ldims = idx_header(lab);
  if (ldims.size() != 1) lab.fail("label file must have exactly 1 dimension", 3);
  if (ldims[0] != n) lab.fail("label count does not match image count", 4);
  Dataset d;
  d.labels.resize(n);
  int max_label = 0;
  for (auto& y : d.labels) {
    y = lab.u8();
    max_label = std::max(max_label, y);
  }
  d.features = resize_nearest(x, options.height.value_or(h), options.width.value_or(w));
  d.class_count = static_cast<std::size_t>(max_label) + 1;
  d.labeled.assign(n, 1);
  assign_splits(d, options.split_seed);
  return d;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r");
    const auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvSchema& schema, std::uint64_t split_seed) {
  const std::string text = io::read_file(path);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) -> void {
    throw ParseError(path.string() + " line " + std::to_string(line_no) + ": " + what);
  };
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    header = split_csv_line(line);
    break;
  }
  if (header.empty()) fail("empty CSV (no header)");
  const auto label_it = std::find(header.begin(), header.end(), schema.label_column);
  if (label_it == header.end()) fail("no column named '" + schema.label_column + "'");
  const std::size_t label_col = static_cast<std::size_t>(label_it - header.begin());
  const std::size_t feature_count = header.size() - 1;
  if (feature_count == 0) fail("CSV has no feature columns");

  std::vector<double> values;
  std::vector<int> labels;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) fail("expected " + std::to_string(header.size()) + " fields");
    for (std::size_t j = 0; j < cells.size(); ++j) {
      char* end = nullptr;
      const double v = std::strtod(cells[j].c_str(), &end);
      if (cells[j].empty() || *end != '\0' || !std::isfinite(v)) fail("bad number '" + cells[j] + "'");
      if (j == label_col) {
        if (v < 0 || v != std::floor(v)) fail("label must be a nonnegative integer");
        labels.push_back(static_cast<int>(v));
      } else {
        values.push_back(v);
      }
    }
  }
  if (labels.empty()) fail("CSV has a header but no data rows");

  const std::size_t n = labels.size();
  Tensor x({n, feature_count}, std::move(values));
  Dataset d;
  minmax_columns(x, d.feature_offset, d.feature_range);
  if (!schema.sample_shape.empty()) {
    if (shape_product(schema.sample_shape) != feature_count) {
      throw ParseError(path.string() + ": schema shape " + shape_string(schema.sample_shape) +
                       " does not hold " + std::to_string(feature_count) + " features");
    }
    Shape full = schema.sample_shape;
    full.insert(full.begin(), n);
    x = x.reshaped(full);
  }
  d.features = std::move(x);
  d.labels = std::move(labels);
  d.class_count = static_cast<std::size_t>(*std::max_element(d.labels.begin(), d.labels.end())) + 1;
  d.labeled.assign(n, 1);
  assign_splits(d, split_seed);
  return d;
}

}  // namespace great::data
