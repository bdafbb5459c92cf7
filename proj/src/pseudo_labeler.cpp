#include "extraction_lab/pseudo_labeler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace extraction_lab {

namespace {
constexpr double kNormFloor = 1e-12;
constexpr double kInverseDistanceEps = 1e-12;

void check_dims(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v, const char* where) {
  if (u.size() != v.size()) throw DimensionMismatch(where, static_cast<int>(u.size()), static_cast<int>(v.size()));
}
}  // namespace

std::string to_string(DistanceMetric m) { return m == DistanceMetric::cosine ? "cosine" : "euclidean"; }

DistanceMetric metric_from_string(const std::string& name) {
  if (name == "cosine") return DistanceMetric::cosine;
  if (name == "euclidean") return DistanceMetric::euclidean;
  throw std::invalid_argument("unknown distance metric '" + name + "'");
}

DistanceMetric default_metric(LabelMode mode) {
  return mode == LabelMode::soft ? DistanceMetric::cosine : DistanceMetric::euclidean;
}

double cosine_distance(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v) {
  check_dims(u, v, "cosine_distance");
  const double nu = u.norm(), nv = v.norm();
  if (nu < kNormFloor && nv < kNormFloor) return 1.0;
  const double d = 1.0 - u.dot(v) / (std::max(nu, kNormFloor) * std::max(nv, kNormFloor));
  return std::clamp(d, 0.0, 2.0);
}

double euclidean_distance(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v) {
  check_dims(u, v, "euclidean_distance");
  return (u - v).norm();
}

double latent_distance(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v,
                       DistanceMetric metric) {
  return metric == DistanceMetric::cosine ? cosine_distance(u, v) : euclidean_distance(u, v);
}

NeighborList knn(const Eigen::Ref<const Eigen::VectorXd>& query, const Eigen::MatrixXd& labeled_latents, std::size_t k,
                 DistanceMetric metric) {
  if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
  const auto n = static_cast<std::size_t>(labeled_latents.rows());
  if (n == 0) throw std::invalid_argument("knn: empty labeled set");

  std::vector<double> dist(n);
  for (std::size_t j = 0; j < n; ++j)
    dist[j] = latent_distance(query, labeled_latents.row(static_cast<Eigen::Index>(j)).transpose(), metric);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  const std::size_t take = std::min(k, n);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take), order.end(),
                    [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); });

  NeighborList out;
  for (std::size_t r = 0; r < take; ++r) {
    out.indices.push_back(order[r]);
    out.distances.push_back(dist[order[r]]);
  }
  return out;
}

Eigen::VectorXd soft_pseudo_label(const NeighborList& neighbors, const Eigen::MatrixXd& labels, NeighborWeighting weighting) {
  if (neighbors.size() == 0) throw std::invalid_argument("soft_pseudo_label: no neighbors");
  std::vector<double> w(neighbors.size());
  double total = 0;
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    const double d = neighbors.distances[j];
    w[j] = weighting == NeighborWeighting::one_minus_distance ? std::max(1.0 - d, 0.0) : 1.0 / (d + kInverseDistanceEps);
    total += w[j];
  }
  if (!(total > 0)) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(neighbors.size()));
    total = 1.0;
  }
  Eigen::VectorXd label = Eigen::VectorXd::Zero(labels.cols());
  for (std::size_t j = 0; j < neighbors.size(); ++j)
    label += w[j] * labels.row(static_cast<Eigen::Index>(neighbors.indices[j])).transpose();
  label /= total;
  return label / label.sum();
}

int hard_pseudo_label(const NeighborList& neighbors, std::span<const int> labels, int num_classes) {
  if (neighbors.size() == 0) throw std::invalid_argument("hard_pseudo_label: no neighbors");
  std::vector<int> votes(static_cast<std::size_t>(num_classes), 0);
  std::vector<double> summed(static_cast<std::size_t>(num_classes), 0.0);
  for (std::size_t j = 0; j < neighbors.size(); ++j) {
    const auto c = static_cast<std::size_t>(labels[neighbors.indices[j]]);
    ++votes[c];
    summed[c] += neighbors.distances[j];
  }
  int best = -1;
  for (int c = 0; c < num_classes; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    if (votes[uc] == 0) continue;
    if (best < 0) {
      best = c;
      continue;
    }
    const auto ub = static_cast<std::size_t>(best);
    if (votes[uc] > votes[ub] || (votes[uc] == votes[ub] && summed[uc] < summed[ub])) best = c;
  }
  return best;
}

void pseudo_label_pool(ProxyPool& pool, const LabeledProxySet& labeled, const Network& student, const PseudoLabelConfig& cfg) {
  if (labeled.size() == 0) throw std::invalid_argument("pseudo_label_pool: empty labeled set");
  const Eigen::MatrixXd labeled_z = latents(student, labeled.samples);
  const std::vector<int> hard = cfg.mode == LabelMode::hard ? labeled.hard_labels() : std::vector<int>{};

  for (std::size_t i : pool.active_indices()) {
    const auto row = static_cast<Eigen::Index>(i);
    const Eigen::VectorXd z = forward(student, pool.features.row(row).transpose()).latent;
    const auto nn = knn(z, labeled_z, cfg.k, cfg.metric);
    if (cfg.mode == LabelMode::soft) {
      pool.pseudo_labels.row(row) = soft_pseudo_label(nn, labeled.targets, cfg.weighting).transpose();
    } else {
      pool.pseudo_labels.row(row) = one_hot<double>(hard_pseudo_label(nn, hard, pool.num_classes), pool.num_classes).transpose();
    }
  }
}

}  // namespace extraction_lab
