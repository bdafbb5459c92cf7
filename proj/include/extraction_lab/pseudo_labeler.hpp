#pragma once

// Self-paced pseudo-labeling: exact kNN in the student's latent space over
// the teacher-labeled set.

#include <Eigen/Dense>

#include <cstddef>
#include <span>
#include <vector>

#include "extraction_lab/data.hpp"
#include "extraction_lab/nn.hpp"
#include "extraction_lab/oracle.hpp"

namespace extraction_lab {

enum class DistanceMetric { euclidean, cosine };
enum class NeighborWeighting { one_minus_distance, inverse_distance };

std::string to_string(DistanceMetric m);
DistanceMetric metric_from_string(const std::string& name);
/// cosine for soft labels, euclidean for hard labels.
DistanceMetric default_metric(LabelMode mode);

struct NeighborList {
  std::vector<std::size_t> indices;  // into the labeled set
  std::vector<double> distances;     // ascending; ties by ascending index
  std::size_t size() const { return indices.size(); }
};

/// 1 - <u,v> / (max(|u|,eps) max(|v|,eps)), eps = 1e-12, clamped to [0, 2];
/// 1 when both norms are below eps.
double cosine_distance(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v);
double euclidean_distance(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v);
double latent_distance(const Eigen::Ref<const Eigen::VectorXd>& u, const Eigen::Ref<const Eigen::VectorXd>& v,
                       DistanceMetric metric);

/// Brute-force scan returning min(k, |labeled|) neighbors.
NeighborList knn(const Eigen::Ref<const Eigen::VectorXd>& query, const Eigen::MatrixXd& labeled_latents, std::size_t k,
                 DistanceMetric metric);

/// Weighted average of neighbor distributions (rows of `labels`, indexed by
/// labeled-set position). Default weights are max(1 - d, 0); all-zero weights
/// fall back to uniform over the neighbors.
Eigen::VectorXd soft_pseudo_label(const NeighborList& neighbors, const Eigen::MatrixXd& labels,
                                  NeighborWeighting weighting = NeighborWeighting::one_minus_distance);

/// Plurality vote; ties go to the smallest summed distance, then the lowest
/// class index.
int hard_pseudo_label(const NeighborList& neighbors, std::span<const int> labels, int num_classes);

struct PseudoLabelConfig {
  std::size_t k = 5;
  DistanceMetric metric = DistanceMetric::cosine;
  LabelMode mode = LabelMode::soft;
  NeighborWeighting weighting = NeighborWeighting::one_minus_distance;
};

/// Overwrites the pseudo-label of every active pool sample; promoted samples
/// are left alone.
void pseudo_label_pool(ProxyPool& pool, const LabeledProxySet& labeled, const Network& student, const PseudoLabelConfig& cfg);

}  // namespace extraction_lab
