#pragma once

// Straightforward reference implementations used as test oracles. They share
// no code with the library beyond plain data types.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

namespace reference {

inline double sum_sq(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double s = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double euclid(const Eigen::VectorXd& a, const Eigen::VectorXd& b) { return std::sqrt(sum_sq(a, b)); }

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double dot = 0, na = 0, nb = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < 1e-12 && nb < 1e-12) return 1.0;
  const double d = 1.0 - dot / (std::max(na, 1e-12) * std::max(nb, 1e-12));
  return std::clamp(d, 0.0, 2.0);
}

// Full sort of every labeled point by (distance, index).
inline std::vector<std::pair<double, std::size_t>> sorted_neighbors(const Eigen::VectorXd& q, const Eigen::MatrixXd& pts,
                                                                   bool use_cosine) {
  std::vector<std::pair<double, std::size_t>> all;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Eigen::VectorXd p = pts.row(i).transpose();
    all.emplace_back(use_cosine ? cosine(q, p) : euclid(q, p), static_cast<std::size_t>(i));
  }
  std::sort(all.begin(), all.end());
  return all;
}

inline Eigen::VectorXd soft_label(const std::vector<std::pair<double, std::size_t>>& nb, const Eigen::MatrixXd& labels) {
  std::vector<double> w;
  double total = 0;
  for (const auto& [d, i] : nb) {
    w.push_back(d < 1.0 ? 1.0 - d : 0.0);
    total += w.back();
  }
  if (total == 0) {
    std::fill(w.begin(), w.end(), 1.0);
    total = static_cast<double>(w.size());
  }
  Eigen::VectorXd out = Eigen::VectorXd::Zero(labels.cols());
  for (std::size_t j = 0; j < nb.size(); ++j) out += (w[j] / total) * labels.row(static_cast<Eigen::Index>(nb[j].second)).transpose();
  return out / out.sum();
}

inline int hard_label(const std::vector<std::pair<double, std::size_t>>& nb, const std::vector<int>& labels, int classes) {
  std::vector<int> votes(static_cast<std::size_t>(classes), 0);
  std::vector<double> dist(static_cast<std::size_t>(classes), 0.0);
  for (const auto& [d, i] : nb) {
    votes[static_cast<std::size_t>(labels[i])]++;
    dist[static_cast<std::size_t>(labels[i])] += d;
  }
  int best = -1;
  for (int c = 0; c < classes; ++c) {
    const auto u = static_cast<std::size_t>(c);
    if (votes[u] == 0) continue;
    if (best < 0) {
      best = c;
      continue;
    }
    const auto b = static_cast<std::size_t>(best);
    if (votes[u] > votes[b] || (votes[u] == votes[b] && dist[u] < dist[b])) best = c;
  }
  return best;
}

// Per-class mean of rows; empty classes flagged by count 0.
inline std::pair<Eigen::MatrixXd, std::vector<int>> centroids(const Eigen::MatrixXd& pts, const std::vector<int>& cls,
                                                              int classes) {
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(classes, pts.cols());
  std::vector<int> n(static_cast<std::size_t>(classes), 0);
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    sum.row(cls[static_cast<std::size_t>(i)]) += pts.row(i);
    n[static_cast<std::size_t>(cls[static_cast<std::size_t>(i)])]++;
  }
  for (int c = 0; c < classes; ++c)
    if (n[static_cast<std::size_t>(c)]) sum.row(c) /= n[static_cast<std::size_t>(c)];
  return {sum, n};
}

inline int nearest(const Eigen::VectorXd& x, const Eigen::MatrixXd& cents, const std::vector<int>& counts) {
  int best = -1;
  double bd = 0;
  for (int c = 0; c < cents.rows(); ++c) {
    if (!counts[static_cast<std::size_t>(c)]) continue;
    const double d = sum_sq(x, cents.row(c).transpose());
    if (best < 0 || d < bd) {
      best = c;
      bd = d;
    }
  }
  return best;
}

// Selection reference: clusters by key, quotas by repeated passes over
// clusters ordered (size desc, class asc), clusters drawn in class order, each
// draw inverting the cumulative weight of the remaining members.
template <typename Rng>
inline std::vector<std::size_t> select(const Eigen::MatrixXd& z, const std::vector<int>& keys,
                                          const std::vector<std::size_t>& ids, int classes, double sigma,
                                          std::size_t count, Rng& rng) {
  auto [cents, counts] = centroids(z, keys, classes);
  std::vector<double> p(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const Eigen::VectorXd zi = z.row(static_cast<Eigen::Index>(i)).transpose();
    const int c = nearest(zi, cents, counts);
    p[i] = std::exp(-sum_sq(zi, cents.row(c).transpose()) / (2 * sigma * sigma));
  }
  std::vector<int> order(static_cast<std::size_t>(classes));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] != counts[static_cast<std::size_t>(b)]
               ? counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)]
               : a < b;
  });
  std::vector<std::size_t> quota(static_cast<std::size_t>(classes), 0);
  std::size_t given = 0;
  while (given < count)
    for (int c : order)
      if (given < count && quota[static_cast<std::size_t>(c)] < static_cast<std::size_t>(counts[static_cast<std::size_t>(c)]))
        ++quota[static_cast<std::size_t>(c)], ++given;

  std::vector<std::size_t> out;
  for (int c = 0; c < classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (keys[i] == c) members.push_back(i);
    for (std::size_t q = 0; q < quota[static_cast<std::size_t>(c)]; ++q) {
      double total = 0;
      for (auto m : members) total += p[m];
      std::size_t pick = 0;
      if (total > 0) {
        const double u = rng.uniform() * total;
        double cum = 0;
        pick = members.size();
        for (std::size_t k = 0; k < members.size(); ++k) {
          if (p[members[k]] <= 0) continue;
          cum += p[members[k]];
          pick = k;
          if (u < cum) break;
        }
      } else {
        pick = rng.index(members.size());
      }
      out.push_back(ids[members[pick]]);
      members.erase(members.begin() + static_cast<std::ptrdiff_t>(pick));
    }
  }
  return out;
}

}  // namespace reference
