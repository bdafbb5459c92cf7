#pragma once

// Centroid-proximity active selection. Latents of the unqueried pool are
// grouped by their current pseudo-label, each sample gets an RBF weight
//   p = exp(-dist(latent, centroid) / (2 sigma^2))
// against its nearest class centroid, and a batch is drawn with an equal
// quota per cluster, weighted by p, without replacement.

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

#include "extraction_lab/data.hpp"
#include "extraction_lab/nn.hpp"
#include "extraction_lab/random.hpp"

namespace extraction_lab {

enum class RbfDistance { squared_euclidean, euclidean };
enum class CentroidChoice { nearest, random_class };

struct SamplerConfig {
  double sigma = 17.0;
  RbfDistance distance = RbfDistance::squared_euclidean;
  CentroidChoice centroid = CentroidChoice::nearest;
};

struct CentroidSet {
  Eigen::MatrixXd centroids;  // num_classes x latent_dim; rows of empty classes are zero
  std::vector<int> counts;

  bool defined(int c) const { return counts[static_cast<std::size_t>(c)] > 0; }
  std::vector<int> defined_classes() const;
};

CentroidSet compute_centroids(const Eigen::MatrixXd& latents, std::span<const int> classes, int num_classes);

/// Nearest defined centroid by squared distance, lowest class on ties.
/// Throws std::invalid_argument when no centroid is defined.
int nearest_centroid(const Eigen::Ref<const Eigen::VectorXd>& latent, const CentroidSet& centroids);

double rbf_weight(double distance, double sigma);
double rbf_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b, RbfDistance form);

double sampling_probability(const Eigen::Ref<const Eigen::VectorXd>& latent, const CentroidSet& centroids, double sigma,
                            RbfDistance form = RbfDistance::squared_euclidean);

struct SamplingPlan {
  std::vector<double> probabilities;
  std::vector<int> class_of;  // cluster of each candidate
};

/// Plan over candidate latents (rows) with their cluster keys. `rng` is only
/// consumed under CentroidChoice::random_class.
SamplingPlan plan_sampling(const Eigen::MatrixXd& latents, std::span<const int> cluster_keys, int num_classes,
                           const SamplerConfig& cfg, Random& rng);

/// Splits `count` over clusters round-robin, largest clusters first (ties by
/// lower class), never exceeding a cluster's size.
std::vector<std::size_t> cluster_quotas(std::span<const std::size_t> cluster_sizes, std::size_t count);

/// Sequential weighted draws without replacement; returns positions into
/// `weights` in draw order. A draw whose remaining weights are all zero falls
/// back to a uniform pick. Each draw consumes exactly one rng.uniform() or
/// rng.index() value.
std::vector<std::size_t> weighted_draw_without_replacement(std::span<const double> weights, std::size_t count, Random& rng);

/// Draws `count` candidates (returned as entries of `candidates`), clusters
/// visited in ascending class order.
std::vector<std::size_t> select_from_plan(const SamplingPlan& plan, std::span<const std::size_t> candidates,
                                          std::size_t count, int num_classes, Random& rng);

/// Active batch of distinct, active pool indices.
std::vector<std::size_t> select_batch(const ProxyPool& pool, const Network& student, const SamplerConfig& cfg,
                                      std::size_t count, Random& rng);

}  // namespace extraction_lab
