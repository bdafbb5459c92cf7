#include "extraction_lab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace extraction_lab {

namespace {

constexpr std::uint64_t kGeometrySeed = 0x6A09E667F3BCC908ULL;
constexpr std::uint64_t kProxySalt = 0xBB67AE8584CAA73BULL;
constexpr int kTemplateVariants = 2;

// Class geometry depends only on the generator shape parameters, never on the
// sample seed, so true data and proxy data share class locations.
class ClassGeometry {
 public:
  explicit ClassGeometry(const DatasetSpec& spec) : spec_(spec) {
    if (spec.generator != Generator::gaussian_blobs) return;
    Random geo(kGeometrySeed ^ (static_cast<std::uint64_t>(spec.num_classes) << 32) ^
               static_cast<std::uint64_t>(spec.input_dim));
    centers_.resize(spec.num_classes, spec.input_dim);
    for (int c = 0; c < spec.num_classes; ++c) {
      Eigen::RowVectorXd dir(spec.input_dim);
      for (int j = 0; j < spec.input_dim; ++j) dir(j) = geo.normal();
      centers_.row(c) = spec.class_separation * dir.normalized();
    }
  }

  Eigen::RowVectorXd draw(int c, double noise, Random& rng) const {
    Eigen::RowVectorXd x(spec_.input_dim);
    for (int j = 0; j < spec_.input_dim; ++j) x(j) = noise * rng.normal();
    switch (spec_.generator) {
      case Generator::gaussian_blobs:
        x += centers_.row(c);
        break;
      case Generator::concentric_rings: {
        const double angle = 2.0 * M_PI * rng.uniform();
        const double radius = (c + 1) * spec_.class_separation;
        x(0) += radius * std::cos(angle);
        x(1) += radius * std::sin(angle);
        break;
      }
      case Generator::xor_grid: {
        // C x C checkerboard with cell (i, j) labeled (i + j) mod C.
        const int C = spec_.num_classes;
        const int i = static_cast<int>(rng.index(static_cast<std::size_t>(C)));
        const int j = ((c - i) % C + C) % C;
        const double half = (C - 1) / 2.0;
        x(0) += (i - half) * spec_.class_separation;
        x(1) += (j - half) * spec_.class_separation;
        break;
      }
    }
    return x;
  }

 private:
  DatasetSpec spec_;
  Eigen::MatrixXd centers_;
};

std::vector<Random> variant_streams(Random& root) {
  std::vector<Random> streams;
  for (int t = 0; t < kTemplateVariants; ++t) streams.push_back(root.fork(static_cast<std::uint64_t>(t + 1)));
  return streams;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

double parse_double(const std::string& s, std::size_t line_no) {
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (s.empty() || end != begin + s.size() || !std::isfinite(v))
    throw DatasetError(DatasetError::Kind::bad_number, "line " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

long parse_int(const std::string& s, std::size_t line_no) {
  long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size())
    throw DatasetError(DatasetError::Kind::bad_number, "line " + std::to_string(line_no) + ": bad label '" + s + "'");
  return v;
}

// Reads a numeric CSV whose header must be `prefix0,...,prefix{n-1}` followed
// by `trailer`. Returns the rows; n is inferred from the header.
struct RawCsv {
  int width = 0;
  std::vector<std::vector<std::string>> rows;
};

RawCsv read_csv(const std::filesystem::path& path, const std::string& prefix, const std::string& trailer) {
  std::ifstream in(path);
  if (!in) throw DatasetError(DatasetError::Kind::io, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line))
    throw DatasetError(DatasetError::Kind::malformed_header, path.string() + ": missing header");
  strip_cr(line);
  auto header = split_csv_line(line);
  if (header.size() < 2 || header.back() != trailer)
    throw DatasetError(DatasetError::Kind::malformed_header, path.string() + ": bad header '" + line + "'");
  for (std::size_t i = 0; i + 1 < header.size(); ++i)
    if (header[i] != prefix + std::to_string(i))
      throw DatasetError(DatasetError::Kind::malformed_header, path.string() + ": bad column '" + header[i] + "'");

  RawCsv raw;
  raw.width = static_cast<int>(header.size()) - 1;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw DatasetError(DatasetError::Kind::ragged_row, path.string() + ": line " + std::to_string(line_no) + " has " +
                                                             std::to_string(fields.size()) + " fields, expected " +
                                                             std::to_string(header.size()));
    raw.rows.push_back(std::move(fields));
  }
  return raw;
}

}  // namespace

std::string to_string(Generator g) {
  switch (g) {
    case Generator::gaussian_blobs: return "gaussian_blobs";
    case Generator::concentric_rings: return "concentric_rings";
    case Generator::xor_grid: return "xor_grid";
  }
  return "unknown";
}

Generator generator_from_string(const std::string& name) {
  if (name == "gaussian_blobs") return Generator::gaussian_blobs;
  if (name == "concentric_rings") return Generator::concentric_rings;
  if (name == "xor_grid") return Generator::xor_grid;
  throw std::invalid_argument("unknown generator '" + name + "'");
}

void DatasetSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("DatasetSpec: num_classes must be >= 2");
  if (input_dim < 2) throw std::invalid_argument("DatasetSpec: input_dim must be >= 2");
  if (per_class_count < 1) throw std::invalid_argument("DatasetSpec: per_class_count must be >= 1");
  if (!(class_separation > 0)) throw std::invalid_argument("DatasetSpec: class_separation must be > 0");
  if (!(noise_scale > 0)) throw std::invalid_argument("DatasetSpec: noise_scale must be > 0");
  if (!(distribution_shift >= 0)) throw std::invalid_argument("DatasetSpec: distribution_shift must be >= 0");
}

Eigen::MatrixXd LabeledDataset::one_hot_targets() const {
  Eigen::MatrixXd t = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(size()), num_classes);
  for (std::size_t i = 0; i < size(); ++i) t(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return t;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  LabeledDataset out;
  out.num_classes = num_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.labels.reserve(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(rows[r]));
    out.labels.push_back(labels[rows[r]]);
  }
  return out;
}

std::size_t ProxyPool::num_active() const {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), std::uint8_t{1}));
}

std::vector<std::size_t> ProxyPool::active_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < active.size(); ++i)
    if (active[i]) out.push_back(i);
  return out;
}

int ProxyPool::pseudo_class(std::size_t i) const {
  auto row = pseudo_labels.row(static_cast<Eigen::Index>(i));
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < row.size(); ++c)
    if (row(c) > row(best)) best = c;
  return static_cast<int>(best);
}

void ProxyPool::promote(std::size_t i) {
  if (!active.at(i)) throw std::logic_error("ProxyPool: sample " + std::to_string(i) + " already promoted");
  active[i] = 0;
}

void LabeledProxySet::add(const Eigen::Ref<const Eigen::RowVectorXd>& sample,
                          const Eigen::Ref<const Eigen::RowVectorXd>& target, std::size_t from_pool) {
  const Eigen::Index n = static_cast<Eigen::Index>(size());
  if (n == 0) {
    samples.resize(0, sample.size());
    targets.resize(0, target.size());
  }
  samples.conservativeResize(n + 1, Eigen::NoChange);
  targets.conservativeResize(n + 1, Eigen::NoChange);
  samples.row(n) = sample;
  targets.row(n) = target;
  pool_index.push_back(from_pool);
}

std::vector<int> LabeledProxySet::hard_labels() const {
  std::vector<int> out(size());
  for (std::size_t i = 0; i < size(); ++i) {
    auto row = targets.row(static_cast<Eigen::Index>(i));
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < row.size(); ++c)
      if (row(c) > row(best)) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

TrueData generate_true_dataset(const DatasetSpec& spec) {
  spec.validate();
  const ClassGeometry geometry(spec);
  Random root(spec.seed);
  auto variants = variant_streams(root);
  Random order_rng = root.fork(0);

  const int per_class = spec.per_class_count;
  const int test_per_class = std::min(per_class - 1, static_cast<int>(std::floor(0.2 * per_class)));
  const int train_per_class = per_class - test_per_class;

  TrueData out;
  out.train.num_classes = out.test.num_classes = spec.num_classes;
  out.train.features.resize(static_cast<Eigen::Index>(train_per_class) * spec.num_classes, spec.input_dim);
  out.test.features.resize(static_cast<Eigen::Index>(test_per_class) * spec.num_classes, spec.input_dim);
  Eigen::Index tr = 0, te = 0;
  for (int c = 0; c < spec.num_classes; ++c) {
    for (int j = 0; j < per_class; ++j) {
      auto x = geometry.draw(c, spec.noise_scale, variants[static_cast<std::size_t>(j % kTemplateVariants)]);
      if (j < train_per_class) {
        out.train.features.row(tr++) = x;
        out.train.labels.push_back(c);
      } else {
        out.test.features.row(te++) = x;
        out.test.labels.push_back(c);
      }
    }
  }

  auto shuffled = [&](const LabeledDataset& d) {
    std::vector<std::size_t> perm(d.size());
    std::iota(perm.begin(), perm.end(), 0);
    order_rng.shuffle(perm);
    return d.subset(perm);
  };
  out.train = shuffled(out.train);
  out.test = shuffled(out.test);
  return out;
}

ProxyPool generate_proxy_pool(const DatasetSpec& spec) {
  spec.validate();
  const ClassGeometry geometry(spec);
  Random root(spec.seed ^ kProxySalt);
  auto variants = variant_streams(root);
  Random class_rng = root.fork(0);
  const double noise = spec.noise_scale * (1.0 + spec.distribution_shift);

  const int m = spec.total();
  ProxyPool pool;
  pool.num_classes = spec.num_classes;
  pool.features.resize(m, spec.input_dim);
  pool.pseudo_labels = Eigen::MatrixXd::Zero(m, spec.num_classes);
  pool.active.assign(static_cast<std::size_t>(m), 1);
  std::vector<int> drawn_per_class(static_cast<std::size_t>(spec.num_classes), 0);
  for (int i = 0; i < m; ++i) {
    const int c = static_cast<int>(class_rng.index(static_cast<std::size_t>(spec.num_classes)));
    const int variant = drawn_per_class[static_cast<std::size_t>(c)]++ % kTemplateVariants;
    pool.features.row(i) = geometry.draw(c, noise, variants[static_cast<std::size_t>(variant)]);
    pool.provenance_class.push_back(c);
    pool.pseudo_labels(i, c) = 1.0;
  }
  return pool;
}

SplitIndices stratified_split(std::span<const int> classes, int num_classes, double fraction, Random& rng) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw std::invalid_argument("stratified_split: fraction must be in [0, 1)");
  const std::size_t m = classes.size();
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < m; ++i) {
    if (classes[i] < 0 || classes[i] >= num_classes) throw std::invalid_argument("stratified_split: class out of range");
    members[static_cast<std::size_t>(classes[i])].push_back(i);
  }

  const std::size_t val_total = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(m)));
  std::vector<std::size_t> quota(members.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < members.size(); ++c) {
    const double exact = fraction * static_cast<double>(members[c].size());
    quota[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t r = 0; assigned < val_total && r < remainders.size(); ++r) {
    const std::size_t c = remainders[r].second;
    if (quota[c] < members[c].size()) {
      ++quota[c];
      ++assigned;
    }
  }

  SplitIndices out;
  for (std::size_t c = 0; c < members.size(); ++c) {
    auto idx = members[c];
    rng.shuffle(idx);
    out.val.insert(out.val.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]));
    out.train.insert(out.train.end(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]), idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split_validation(const LabeledDataset& data, double fraction, Random& rng) {
  if (data.size() == 0) throw std::invalid_argument("split_validation: empty dataset");
  auto split = stratified_split(data.labels, data.num_classes, fraction, rng);
  return {data.subset(split.train), data.subset(split.val)};
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void save_dataset(const LabeledDataset& data, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DatasetError(DatasetError::Kind::io, "cannot open " + path.string() + " for writing");
  for (int j = 0; j < data.input_dim(); ++j) out << 'f' << j << ',';
  out << "label\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (int j = 0; j < data.input_dim(); ++j) out << format_double(data.features(static_cast<Eigen::Index>(i), j)) << ',';
    out << data.labels[i] << '\n';
  }
}

LabeledDataset load_dataset(const std::filesystem::path& path, std::optional<int> num_classes) {
  auto raw = read_csv(path, "f", "label");
  LabeledDataset data;
  data.features.resize(static_cast<Eigen::Index>(raw.rows.size()), raw.width);
  int max_label = -1;
  for (std::size_t i = 0; i < raw.rows.size(); ++i) {
    const std::size_t line_no = i + 2;
    for (int j = 0; j < raw.width; ++j)
      data.features(static_cast<Eigen::Index>(i), j) = parse_double(raw.rows[i][static_cast<std::size_t>(j)], line_no);
    const long label = parse_int(raw.rows[i].back(), line_no);
    if (label < 0 || (num_classes && label >= *num_classes))
      throw DatasetError(DatasetError::Kind::label_out_of_range,
                         path.string() + ": line " + std::to_string(line_no) + ": label " + std::to_string(label) +
                             " out of range");
    data.labels.push_back(static_cast<int>(label));
    max_label = std::max(max_label, static_cast<int>(label));
  }
  data.num_classes = num_classes ? *num_classes : max_label + 1;
  return data;
}

void save_pool(const ProxyPool& pool, const std::filesystem::path& csv_path, const std::filesystem::path& sidecar_path) {
  LabeledDataset as_data{pool.features, pool.provenance_class, pool.num_classes};
  save_dataset(as_data, csv_path);
  std::ofstream out(sidecar_path);
  if (!out) throw DatasetError(DatasetError::Kind::io, "cannot open " + sidecar_path.string() + " for writing");
  for (int c = 0; c < pool.num_classes; ++c) out << 'p' << c << ',';
  out << "active\n";
  for (std::size_t i = 0; i < pool.size(); ++i) {
    for (int c = 0; c < pool.num_classes; ++c) out << format_double(pool.pseudo_labels(static_cast<Eigen::Index>(i), c)) << ',';
    out << static_cast<int>(pool.active[i]) << '\n';
  }
}

ProxyPool pool_from_dataset(const LabeledDataset& data) {
  ProxyPool pool;
  pool.num_classes = data.num_classes;
  pool.features = data.features;
  pool.provenance_class = data.labels;
  pool.pseudo_labels = data.one_hot_targets();
  pool.active.assign(data.size(), 1);
  return pool;
}

ProxyPool load_pool(const std::filesystem::path& csv_path, const std::filesystem::path& sidecar_path, int num_classes) {
  auto pool = pool_from_dataset(load_dataset(csv_path, num_classes));
  auto raw = read_csv(sidecar_path, "p", "active");
  if (raw.width != num_classes)
    throw DatasetError(DatasetError::Kind::malformed_header, sidecar_path.string() + ": expected " +
                                                                 std::to_string(num_classes) + " probability columns");
  if (raw.rows.size() != pool.size())
    throw DatasetError(DatasetError::Kind::ragged_row, sidecar_path.string() + ": row count differs from pool");
  for (std::size_t i = 0; i < raw.rows.size(); ++i) {
    for (int c = 0; c < num_classes; ++c)
      pool.pseudo_labels(static_cast<Eigen::Index>(i), c) = parse_double(raw.rows[i][static_cast<std::size_t>(c)], i + 2);
    const long flag = parse_int(raw.rows[i].back(), i + 2);
    if (flag != 0 && flag != 1)
      throw DatasetError(DatasetError::Kind::bad_number, sidecar_path.string() + ": active flag must be 0 or 1");
    pool.active[i] = static_cast<std::uint8_t>(flag);
  }
  return pool;
}

}  // namespace extraction_lab
