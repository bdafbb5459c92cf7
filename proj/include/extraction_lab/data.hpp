#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "extraction_lab/random.hpp"

namespace extraction_lab {

enum class Generator { gaussian_blobs, concentric_rings, xor_grid };

std::string to_string(Generator g);
Generator generator_from_string(const std::string& name);

struct DatasetSpec {
  Generator generator = Generator::gaussian_blobs;
  int num_classes = 10;
  int input_dim = 8;
  int per_class_count = 100;
  double class_separation = 4.0;
  double noise_scale = 1.0;
  // Proxy noise is inflated by (1 + distribution_shift).
  double distribution_shift = 0.0;
  std::uint64_t seed = 0;

  int total() const { return per_class_count * num_classes; }
  void validate() const;
};

struct LabeledDataset {
  Eigen::MatrixXd features;  // one sample per row
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  int input_dim() const { return static_cast<int>(features.cols()); }
  Eigen::MatrixXd one_hot_targets() const;
  LabeledDataset subset(std::span<const std::size_t> rows) const;
};

// Unqueried proxy samples. pseudo_labels rows are probability vectors;
// active[i] turns false once sample i is sent to the teacher and never
// turns back.
struct ProxyPool {
  Eigen::MatrixXd features;
  std::vector<int> provenance_class;
  Eigen::MatrixXd pseudo_labels;
  std::vector<std::uint8_t> active;
  int num_classes = 0;

  std::size_t size() const { return provenance_class.size(); }
  std::size_t num_active() const;
  std::vector<std::size_t> active_indices() const;
  int pseudo_class(std::size_t i) const;
  void promote(std::size_t i);
};

// Teacher-labeled proxy samples (X', Y'). Targets are the teacher's soft
// distribution or the one-hot of its hard label.
struct LabeledProxySet {
  Eigen::MatrixXd samples;
  Eigen::MatrixXd targets;
  std::vector<std::size_t> pool_index;

  std::size_t size() const { return pool_index.size(); }
  void add(const Eigen::Ref<const Eigen::RowVectorXd>& sample, const Eigen::Ref<const Eigen::RowVectorXd>& target,
           std::size_t from_pool);
  std::vector<int> hard_labels() const;
};

struct TrueData {
  LabeledDataset train;
  LabeledDataset test;
};

/// Per-class samples from the generator with a stratified 80/20 train/test
/// split; a class keeps at least one training sample.
TrueData generate_true_dataset(const DatasetSpec& spec);

/// Proxy pool of spec.total() samples: each sample's class is drawn uniformly,
/// then the sample comes from that class's generator with inflated noise.
/// Pseudo-labels start one-hot at the provenance class.
ProxyPool generate_proxy_pool(const DatasetSpec& spec);

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Stratified split: the validation part receives floor(fraction * m)
/// samples, allocated across classes by largest remainder. Index lists are
/// sorted ascending.
SplitIndices stratified_split(std::span<const int> classes, int num_classes, double fraction, Random& rng);

std::pair<LabeledDataset, LabeledDataset> split_validation(const LabeledDataset& data, double fraction, Random& rng);

class DatasetError : public std::runtime_error {
 public:
  enum class Kind { io, malformed_header, ragged_row, bad_number, label_out_of_range };
  DatasetError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// CSV with header "f0,...,f{d-1},label"; floats written with 17 significant
// digits.
void save_dataset(const LabeledDataset& data, const std::filesystem::path& path);
/// Without num_classes, it is inferred as max(label) + 1.
LabeledDataset load_dataset(const std::filesystem::path& path, std::optional<int> num_classes = std::nullopt);

// Pool features go to `csv_path` in dataset form (label = provenance class);
// pseudo-labels and active flags go to `sidecar_path` as
// "p0,...,p{C-1},active".
void save_pool(const ProxyPool& pool, const std::filesystem::path& csv_path, const std::filesystem::path& sidecar_path);
ProxyPool load_pool(const std::filesystem::path& csv_path, const std::filesystem::path& sidecar_path, int num_classes);
/// Fresh pool (one-hot pseudo-labels, all active) from a dataset file.
ProxyPool pool_from_dataset(const LabeledDataset& data);

std::string format_double(double v);

}  // namespace extraction_lab
