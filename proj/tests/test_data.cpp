#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>

#include "extraction_lab/data.hpp"

using namespace extraction_lab;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "extraction_lab_test_data";
  fs::create_directories(dir);
  return dir / name;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

DatasetError::Kind load_error(const std::string& text, std::optional<int> classes = std::nullopt) {
  const auto p = temp_path("bad.csv");
  write_file(p, text);
  try {
    load_dataset(p, classes);
  } catch (const DatasetError& e) {
    return e.kind();
  }
  FAIL("no error raised");
  return DatasetError::Kind::io;
}

}  // namespace

TEST_CASE("separable blobs are linearly separable") {
  DatasetSpec spec;
  spec.num_classes = 2;
  spec.input_dim = 4;
  spec.per_class_count = 200;
  spec.class_separation = 10;
  spec.noise_scale = 0.1;
  spec.seed = 3;
  const auto data = generate_true_dataset(spec);
  CHECK(data.train.size() == 320);
  CHECK(data.test.size() == 80);

  // nearest class mean is a linear rule for two classes
  Eigen::MatrixXd means = Eigen::MatrixXd::Zero(2, 4);
  Eigen::Vector2d counts = Eigen::Vector2d::Zero();
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    means.row(data.train.labels[i]) += data.train.features.row(static_cast<Eigen::Index>(i));
    counts[data.train.labels[i]] += 1;
  }
  means.row(0) /= counts[0];
  means.row(1) /= counts[1];
  int hits = 0;
  for (std::size_t i = 0; i < data.test.size(); ++i) {
    const auto x = data.test.features.row(static_cast<Eigen::Index>(i));
    const int pred = (x - means.row(0)).squaredNorm() <= (x - means.row(1)).squaredNorm() ? 0 : 1;
    hits += pred == data.test.labels[i];
  }
  CHECK(hits / static_cast<double>(data.test.size()) >= 0.99);
}

TEST_CASE("true data generation is reproducible and stratified") {
  DatasetSpec spec;
  spec.seed = 9;
  const auto a = generate_true_dataset(spec), b = generate_true_dataset(spec);
  CHECK(a.train.features == b.train.features);
  CHECK(a.test.labels == b.test.labels);
  std::vector<int> per(10, 0);
  for (int l : a.test.labels) per[static_cast<std::size_t>(l)]++;
  for (int n : per) CHECK(n == 20);

  spec.seed = 10;
  CHECK(generate_true_dataset(spec).train.features != a.train.features);

  SUBCASE("one sample per class stays in train") {
    spec.per_class_count = 1;
    const auto d = generate_true_dataset(spec);
    CHECK(d.train.size() == 10);
    CHECK(d.test.size() == 0);
  }
}

TEST_CASE("every generator produces finite, in-range data") {
  for (auto g : {Generator::gaussian_blobs, Generator::concentric_rings, Generator::xor_grid}) {
    DatasetSpec spec;
    spec.generator = g;
    spec.num_classes = 4;
    spec.input_dim = 3;
    spec.per_class_count = 30;
    const auto d = generate_true_dataset(spec);
    CHECK(d.train.features.allFinite());
    for (int l : d.train.labels) CHECK((l >= 0 && l < 4));
    CHECK(generator_from_string(to_string(g)) == g);
  }
  CHECK_THROWS_AS(generator_from_string("spirals"), std::invalid_argument);
}

TEST_CASE("spec validation") {
  DatasetSpec spec;
  spec.input_dim = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.num_classes = 1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = {};
  spec.distribution_shift = -0.1;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("proxy pool contents") {
  DatasetSpec spec;
  spec.num_classes = 2;
  spec.per_class_count = 5;
  spec.seed = 4;
  const ProxyPool pool = generate_proxy_pool(spec);
  CHECK(pool.size() == 10);
  CHECK(pool.num_active() == 10);
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto row = pool.pseudo_labels.row(static_cast<Eigen::Index>(i));
    CHECK(std::abs(row.sum() - 1.0) < 1e-6);
    CHECK(pool.pseudo_class(i) == pool.provenance_class[i]);
  }
}

TEST_CASE("proxy noise is inflated by the shift") {
  DatasetSpec spec;
  spec.num_classes = 2;
  spec.input_dim = 2;
  spec.per_class_count = 5000;
  spec.noise_scale = 0.8;
  spec.distribution_shift = 0.5;
  spec.seed = 12;
  const ProxyPool pool = generate_proxy_pool(spec);
  const double expected = (1.5 * 0.8) * (1.5 * 0.8);
  for (int c = 0; c < 2; ++c) {
    std::vector<Eigen::Index> rows;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool.provenance_class[i] == c) rows.push_back(static_cast<Eigen::Index>(i));
    Eigen::MatrixXd x = pool.features(rows, Eigen::all);
    const Eigen::RowVectorXd mean = x.colwise().mean();
    const Eigen::RowVectorXd var = (x.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(x.rows() - 1);
    for (Eigen::Index j = 0; j < var.size(); ++j) CHECK(var[j] == doctest::Approx(expected).epsilon(0.10));
  }
}

TEST_CASE("proxy and true data share class geometry at zero shift") {
  DatasetSpec spec;
  spec.per_class_count = 400;
  spec.seed = 1;
  const auto truth = generate_true_dataset(spec);
  const ProxyPool pool = generate_proxy_pool(spec);
  for (int c = 0; c < spec.num_classes; ++c) {
    Eigen::RowVectorXd mt = Eigen::RowVectorXd::Zero(spec.input_dim), mp = mt;
    int nt = 0, np = 0;
    for (std::size_t i = 0; i < truth.train.size(); ++i)
      if (truth.train.labels[i] == c) mt += truth.train.features.row(static_cast<Eigen::Index>(i)), ++nt;
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (pool.provenance_class[i] == c) mp += pool.features.row(static_cast<Eigen::Index>(i)), ++np;
    CHECK((mt / nt - mp / np).norm() < 0.5);
  }
}

TEST_CASE("stratified split") {
  Random rng(5);
  std::vector<int> classes;
  for (int i = 0; i < 100; ++i) classes.push_back(i % 10);
  const auto s = stratified_split(classes, 10, 0.15, rng);
  CHECK(s.val.size() == 15);
  CHECK(s.train.size() == 85);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  CHECK(all.size() == 100);
  std::vector<int> per(10, 0);
  for (auto i : s.val) per[static_cast<std::size_t>(classes[i])]++;
  for (int n : per) CHECK((n == 1 || n == 2));

  SUBCASE("tiny fraction leaves validation empty") {
    const std::vector<int> five{0, 1, 0, 1, 0};
    const auto t = stratified_split(five, 2, 0.1, rng);
    CHECK(t.val.empty());
    CHECK(t.train.size() == 5);
  }
  SUBCASE("proportions within one sample on random labels") {
    for (int trial = 0; trial < 50; ++trial) {
      std::vector<int> c(20 + rng.index(200));
      for (auto& v : c) v = static_cast<int>(rng.index(5));
      const double f = 0.05 + 0.5 * rng.uniform();
      const auto u = stratified_split(c, 5, f, rng);
      CHECK(u.val.size() == static_cast<std::size_t>(std::floor(f * static_cast<double>(c.size()))));
      for (int k = 0; k < 5; ++k) {
        const double total = static_cast<double>(std::count(c.begin(), c.end(), k));
        double in_val = 0;
        for (auto i : u.val) in_val += c[i] == k;
        CHECK(std::abs(in_val - f * total) <= 1.0 + 1e-9);
      }
    }
  }
  CHECK_THROWS_AS(stratified_split(classes, 10, 1.0, rng), std::invalid_argument);
}

TEST_CASE("split is deterministic under a seed") {
  DatasetSpec spec;
  const auto d = generate_true_dataset(spec);
  Random a(1), b(1);
  CHECK(split_validation(d.train, 0.15, a).second.labels == split_validation(d.train, 0.15, b).second.labels);
}

TEST_CASE("dataset CSV round trip") {
  DatasetSpec spec;
  spec.num_classes = 3;
  spec.per_class_count = 20;
  const auto d = generate_true_dataset(spec);
  const auto p = temp_path("round.csv");
  save_dataset(d.train, p);
  const auto back = load_dataset(p, 3);
  CHECK(back.features == d.train.features);
  CHECK(back.labels == d.train.labels);
  CHECK(load_dataset(p).num_classes == 3);
}

TEST_CASE("dataset CSV errors are distinct") {
  CHECK(load_error("") == DatasetError::Kind::malformed_header);
  CHECK(load_error("x0,x1,label\n1,2,0\n") == DatasetError::Kind::malformed_header);
  CHECK(load_error("f0,f1,label\n1,2,0\n1,0\n") == DatasetError::Kind::ragged_row);
  CHECK(load_error("f0,f1,label\n1,abc,0\n") == DatasetError::Kind::bad_number);
  CHECK(load_error("f0,f1,label\n1,2,3\n", 3) == DatasetError::Kind::label_out_of_range);
  CHECK(load_error("f0,f1,label\n1,2,-1\n") == DatasetError::Kind::label_out_of_range);
  try {
    load_dataset("/nonexistent/data.csv");
    FAIL("expected io error");
  } catch (const DatasetError& e) {
    CHECK(e.kind() == DatasetError::Kind::io);
  }
}

TEST_CASE("pool save and load keeps pseudo-labels and flags") {
  DatasetSpec spec;
  spec.num_classes = 3;
  spec.per_class_count = 6;
  ProxyPool pool = generate_proxy_pool(spec);
  pool.pseudo_labels.row(2) << 0.25, 0.5, 0.25;
  pool.promote(4);
  const auto csv = temp_path("pool.csv"), side = temp_path("pool.pseudo.csv");
  save_pool(pool, csv, side);
  const ProxyPool back = load_pool(csv, side, 3);
  CHECK(back.features == pool.features);
  CHECK(back.pseudo_labels == pool.pseudo_labels);
  CHECK(back.active == pool.active);
  CHECK(back.provenance_class == pool.provenance_class);
  CHECK_THROWS_AS(load_pool(csv, side, 4), DatasetError);
}

TEST_CASE("promotion is monotone") {
  DatasetSpec spec;
  spec.num_classes = 2;
  spec.per_class_count = 3;
  ProxyPool pool = generate_proxy_pool(spec);
  pool.promote(1);
  CHECK_FALSE(pool.active[1]);
  CHECK(pool.num_active() == 5);
  CHECK_THROWS(pool.promote(1));
  const auto idx = pool.active_indices();
  CHECK(std::find(idx.begin(), idx.end(), std::size_t{1}) == idx.end());
}
