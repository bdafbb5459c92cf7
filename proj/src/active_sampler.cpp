#include "extraction_lab/active_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace extraction_lab {

std::vector<int> CentroidSet::defined_classes() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < counts.size(); ++c)
    if (counts[c] > 0) out.push_back(static_cast<int>(c));
  return out;
}

CentroidSet compute_centroids(const Eigen::MatrixXd& latents, std::span<const int> classes, int num_classes) {
  if (static_cast<std::size_t>(latents.rows()) != classes.size())
    throw std::invalid_argument("compute_centroids: latent/class count mismatch");
  CentroidSet set;
  set.centroids = Eigen::MatrixXd::Zero(num_classes, latents.cols());
  set.counts.assign(static_cast<std::size_t>(num_classes), 0);
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const int c = classes[i];
    if (c < 0 || c >= num_classes) throw std::invalid_argument("compute_centroids: class out of range");
    set.centroids.row(c) += latents.row(static_cast<Eigen::Index>(i));
    ++set.counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < num_classes; ++c)
    if (set.counts[static_cast<std::size_t>(c)] > 0) set.centroids.row(c) /= static_cast<double>(set.counts[static_cast<std::size_t>(c)]);
  return set;
}

int nearest_centroid(const Eigen::Ref<const Eigen::VectorXd>& latent, const CentroidSet& centroids) {
  int best = -1;
  double best_d = 0;
  for (std::size_t c = 0; c < centroids.counts.size(); ++c) {
    if (centroids.counts[c] == 0) continue;
    const double d = (latent - centroids.centroids.row(static_cast<Eigen::Index>(c)).transpose()).squaredNorm();
    if (best < 0 || d < best_d) {
      best = static_cast<int>(c);
      best_d = d;
    }
  }
  if (best < 0) throw std::invalid_argument("nearest_centroid: no defined centroids");
  return best;
}

double rbf_weight(double distance, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("rbf_weight: sigma must be > 0");
  return std::exp(-distance / (2.0 * sigma * sigma));
}

double rbf_distance(const Eigen::Ref<const Eigen::VectorXd>& a, const Eigen::Ref<const Eigen::VectorXd>& b, RbfDistance form) {
  const double sq = (a - b).squaredNorm();
  return form == RbfDistance::squared_euclidean ? sq : std::sqrt(sq);
}

double sampling_probability(const Eigen::Ref<const Eigen::VectorXd>& latent, const CentroidSet& centroids, double sigma,
                            RbfDistance form) {
  const int c = nearest_centroid(latent, centroids);
  return rbf_weight(rbf_distance(latent, centroids.centroids.row(c).transpose(), form), sigma);
}

SamplingPlan plan_sampling(const Eigen::MatrixXd& latents, std::span<const int> cluster_keys, int num_classes,
                           const SamplerConfig& cfg, Random& rng) {
  const auto centroids = compute_centroids(latents, cluster_keys, num_classes);
  const auto defined = centroids.defined_classes();
  SamplingPlan plan;
  plan.class_of.assign(cluster_keys.begin(), cluster_keys.end());
  plan.probabilities.reserve(cluster_keys.size());
  for (Eigen::Index i = 0; i < latents.rows(); ++i) {
    const Eigen::VectorXd z = latents.row(i).transpose();
    int c;
    if (cfg.centroid == CentroidChoice::nearest) {
      c = nearest_centroid(z, centroids);
    } else {
      c = defined[rng.index(defined.size())];
    }
    plan.probabilities.push_back(rbf_weight(rbf_distance(z, centroids.centroids.row(c).transpose(), cfg.distance), cfg.sigma));
  }
  return plan;
}

std::vector<std::size_t> cluster_quotas(std::span<const std::size_t> cluster_sizes, std::size_t count) {
  const std::size_t available = std::accumulate(cluster_sizes.begin(), cluster_sizes.end(), std::size_t{0});
  if (count > available) throw std::invalid_argument("cluster_quotas: count exceeds available samples");
  std::vector<std::size_t> order(cluster_sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return cluster_sizes[a] > cluster_sizes[b]; });

  std::vector<std::size_t> quota(cluster_sizes.size(), 0);
  std::size_t assigned = 0;
  while (assigned < count) {
    for (std::size_t c : order) {
      if (assigned == count) break;
      if (quota[c] < cluster_sizes[c]) {
        ++quota[c];
        ++assigned;
      }
    }
  }
  return quota;
}

std::vector<std::size_t> weighted_draw_without_replacement(std::span<const double> weights, std::size_t count, Random& rng) {
  if (count > weights.size()) throw std::invalid_argument("weighted_draw_without_replacement: count exceeds population");
  std::vector<std::size_t> remaining(weights.size());
  std::iota(remaining.begin(), remaining.end(), 0);
  std::vector<std::size_t> picked;
  picked.reserve(count);
  for (std::size_t draw = 0; draw < count; ++draw) {
    double total = 0;
    for (std::size_t r : remaining) total += weights[r];
    std::size_t pos;
    if (total > 0) {
      const double u = rng.uniform() * total;
      double cum = 0;
      pos = remaining.size();
      std::size_t last_positive = 0;
      for (std::size_t k = 0; k < remaining.size(); ++k) {
        if (weights[remaining[k]] <= 0) continue;
        last_positive = k;
        cum += weights[remaining[k]];
        if (u < cum) {
          pos = k;
          break;
        }
      }
      if (pos == remaining.size()) pos = last_positive;  // rounding at the top end
    } else {
      pos = rng.index(remaining.size());
    }
    picked.push_back(remaining[pos]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(pos));
  }
  return picked;
}

std::vector<std::size_t> select_from_plan(const SamplingPlan& plan, std::span<const std::size_t> candidates,
                                          std::size_t count, int num_classes, Random& rng) {
  if (candidates.size() != plan.probabilities.size())
    throw std::invalid_argument("select_from_plan: candidate/plan size mismatch");
  if (count > candidates.size()) throw std::invalid_argument("select_from_plan: count exceeds candidates");

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(num_classes));
  for (std::size_t i = 0; i < candidates.size(); ++i) members[static_cast<std::size_t>(plan.class_of[i])].push_back(i);
  std::vector<std::size_t> sizes;
  for (const auto& m : members) sizes.push_back(m.size());
  const auto quota = cluster_quotas(sizes, count);

  std::vector<std::size_t> out;
  out.reserve(count);
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (quota[c] == 0) continue;
    std::vector<double> w;
    w.reserve(members[c].size());
    for (std::size_t i : members[c]) w.push_back(plan.probabilities[i]);
    for (std::size_t pos : weighted_draw_without_replacement(w, quota[c], rng)) out.push_back(candidates[members[c][pos]]);
  }
  return out;
}

std::vector<std::size_t> select_batch(const ProxyPool& pool, const Network& student, const SamplerConfig& cfg,
                                      std::size_t count, Random& rng) {
  const auto candidates = pool.active_indices();
  if (count > candidates.size())
    throw std::invalid_argument("select_batch: requested " + std::to_string(count) + " samples but only " +
                                std::to_string(candidates.size()) + " are active");
  if (count == 0) return {};

  Eigen::MatrixXd z(static_cast<Eigen::Index>(candidates.size()), student.spec.latent_dim());
  std::vector<int> keys(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    z.row(static_cast<Eigen::Index>(i)) =
        forward(student, pool.features.row(static_cast<Eigen::Index>(candidates[i])).transpose()).latent.transpose();
    keys[i] = pool.pseudo_class(candidates[i]);
  }
  const auto plan = plan_sampling(z, keys, pool.num_classes, cfg, rng);
  return select_from_plan(plan, candidates, count, pool.num_classes, rng);
}

}  // namespace extraction_lab
