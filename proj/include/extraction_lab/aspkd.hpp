#pragma once

// Active self-paced knowledge distillation. Each round spends up to s teacher
// calls on actively selected proxy samples, trains the student on the
// teacher-labeled set, pseudo-labels the rest of the pool with kNN in the
// student's latent space and trains again on both. Rounds repeat until
// exactly n = per_class_budget * num_classes calls have been made.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "extraction_lab/active_sampler.hpp"
#include "extraction_lab/data.hpp"
#include "extraction_lab/nn.hpp"
#include "extraction_lab/oracle.hpp"
#include "extraction_lab/pseudo_labeler.hpp"

namespace extraction_lab {

enum class AttackMode { vanilla, active_only, self_paced_only, full };

std::string to_string(AttackMode mode);
/// Accepts "vanilla", "active", "self-paced", "full" and the enum spellings.
AttackMode attack_mode_from_string(const std::string& name);

bool uses_active_selection(AttackMode mode);
bool uses_pseudo_labels(AttackMode mode);

struct ASPKDConfig {
  int per_class_budget = 4;
  // Unset: n for vanilla; otherwise n (1 call/class), ceil(n/2) (2 calls/class)
  // or ceil(n/3).
  std::optional<int> calls_per_round;
  std::size_t k = 5;
  double sigma = 17.0;
  std::optional<DistanceMetric> metric;  // unset: paired with label_mode
  LabelMode label_mode = LabelMode::soft;
  AttackMode mode = AttackMode::full;
  TrainConfig train;
  double validation_fraction = 0.15;
  std::uint64_t seed = 0;

  RbfDistance rbf_distance = RbfDistance::squared_euclidean;
  CentroidChoice centroid = CentroidChoice::nearest;
  NeighborWeighting weighting = NeighborWeighting::one_minus_distance;

  std::int64_t budget(int num_classes) const { return static_cast<std::int64_t>(per_class_budget) * num_classes; }
  std::int64_t effective_calls_per_round(int num_classes) const;
  std::int64_t rounds(int num_classes) const;
  DistanceMetric effective_metric() const { return metric.value_or(default_metric(label_mode)); }
  void validate() const;
};

struct PhaseTimes {
  double select_ms = 0;
  double query_ms = 0;
  double supervised_ms = 0;
  double pseudo_label_ms = 0;
  double joint_ms = 0;
};

struct RoundRecord {
  int round = 0;
  std::int64_t calls_used = 0;  // cumulative
  std::size_t labeled_size = 0;
  bool early_stopping = false;
  int supervised_epochs = 0;
  int joint_epochs = 0;
  std::uint64_t pool_hash = 0;  // FNV-1a over pseudo-labels and active flags
  std::optional<double> pseudo_label_accuracy;
  PhaseTimes times;
};

struct RunReport {
  ASPKDConfig config;
  NetworkSpec student_spec;
  std::int64_t budget = 0;
  std::int64_t calls_used = 0;
  std::vector<RoundRecord> rounds;
  std::optional<double> agreement_accuracy;
  std::optional<double> pseudo_label_accuracy;  // last round's diagnostic value
  double wall_ms = 0;
  std::string student_checkpoint;  // nn-core checkpoint document
};

struct AttackResult {
  Network student;
  RunReport report;
  ProxyPool pool;
  LabeledProxySet labeled;
};

enum class Phase { select_active, select_uniform, query, supervised, pseudo_label, joint };
std::string to_string(Phase phase);

// Optional instrumentation. after_pseudo_label runs on the freshly
// pseudo-labeled pool and may return a diagnostic accuracy for the round.
struct AttackHooks {
  std::function<void(int round, Phase phase)> on_phase;
  std::function<std::optional<double>(int round, const ProxyPool& pool)> after_pseudo_label;
};

std::uint64_t pool_hash(const ProxyPool& pool);

/// Runs the attack against `oracle`. The student is initialized once and its
/// weights persist across all rounds and phases; every training phase starts
/// from a fresh Adam state. Throws std::invalid_argument when the pool has
/// fewer than n active samples or the oracle has fewer than n calls left.
AttackResult run_aspkd(Oracle& oracle, ProxyPool pool, const NetworkSpec& student_spec, const ASPKDConfig& cfg,
                       const AttackHooks& hooks = {});

std::string report_to_json(const RunReport& report);

}  // namespace extraction_lab
