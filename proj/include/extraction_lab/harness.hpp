#pragma once

// Experiment plumbing around the attack: teacher training, evaluation
// metrics, the four-arm ablation and budget sweeps with CSV output.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "extraction_lab/aspkd.hpp"
#include "extraction_lab/data.hpp"
#include "extraction_lab/nn.hpp"
#include "extraction_lab/oracle.hpp"

namespace extraction_lab {

/// lr 5e-4, batch 64, step 5, gamma 0.95, 100 epochs, patience 10.
TrainConfig teacher_train_defaults();
/// lr 9e-4, batch 64, step 20, gamma 0.95, 100 epochs, patience 10.
TrainConfig student_train_defaults();

struct TeacherResult {
  Network teacher;
  double test_accuracy = 0;  // against ground truth
  TrainResult training;
};

/// Trains on `train` with ground-truth labels, holding out `validation_fraction`
/// of it (stratified) for early stopping. Seeded from cfg.seed.
TeacherResult train_teacher(const LabeledDataset& train, const LabeledDataset& test, const NetworkSpec& spec,
                            const TrainConfig& cfg, double validation_fraction = 0.15);

std::vector<int> predicted_classes(const Network& net, const Eigen::MatrixXd& samples);
double classification_accuracy(std::span<const int> predicted, std::span<const int> expected);

/// Fraction of test rows where the student's argmax equals the teacher's label.
double agreement_accuracy(const Network& student, const Eigen::MatrixXd& test_samples, std::span<const int> teacher_labels);

/// Fraction of active pool samples whose pseudo-label argmax matches the
/// diagnostic teacher label (indexed by pool position).
double pseudo_label_accuracy(const ProxyPool& pool, std::span<const int> diagnostic_labels);

// Teacher + data setting for attack experiments.
struct Benchmark {
  DatasetSpec true_data;
  double proxy_shift = 0.3;
  int proxy_per_class = 200;
  NetworkSpec teacher_spec;
  NetworkSpec student_spec;
  TrainConfig teacher_train = teacher_train_defaults();

  DatasetSpec proxy_spec(std::uint64_t seed) const;
};

/// gaussian_blobs, 10 classes, 8 dimensions, proxy shift 0.3, pool of 2000;
/// teacher [64, 32], student [32, 16].
Benchmark default_blobs_benchmark();

struct PreparedBenchmark {
  Benchmark spec;
  TrueData data;
  Network teacher;
  double teacher_accuracy = 0;
  std::vector<int> teacher_test_labels;  // measured outside any budget
};

PreparedBenchmark prepare_benchmark(const Benchmark& bench);

struct EvaluatedRun {
  AttackResult result;
  double agreement = 0;
  std::optional<double> pseudo_label_accuracy;
};

/// Runs the attack against a fresh in-process oracle with budget exactly n,
/// recording per-round pseudo-label accuracy through the diagnostic path.
EvaluatedRun run_local_attack(const PreparedBenchmark& bench, const ProxyPool& pool, const ASPKDConfig& cfg);

using OracleFactory = std::function<std::unique_ptr<Oracle>(std::int64_t budget)>;
using PoolFactory = std::function<ProxyPool(std::uint64_t seed)>;
using Evaluator = std::function<double(const Network& student)>;

struct SummaryStats {
  double mean = 0;
  double stddev = 0;  // sample standard deviation; 0 for fewer than two values
};
SummaryStats summarize(std::span<const double> values);

struct AblationRow {
  AttackMode mode = AttackMode::vanilla;
  std::vector<std::uint64_t> seeds;
  std::vector<double> accuracies;
  std::vector<std::int64_t> calls_used;
  SummaryStats stats;
};

/// All four modes per seed with the same pool, oracle budget and attack seed.
std::vector<AblationRow> run_ablation_suite(const OracleFactory& make_oracle, const PoolFactory& make_pool,
                                            const Evaluator& evaluate, const NetworkSpec& student_spec,
                                            const ASPKDConfig& cfg, std::span<const std::uint64_t> seeds, int jobs = 1);

std::string format_ablation_table(std::span<const AblationRow> rows);

struct SweepSpec {
  std::vector<int> per_class_budgets{1, 2, 4, 8, 16, 32, 64, 128, 256};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<AttackMode> modes{AttackMode::full};
  std::vector<LabelMode> label_modes{LabelMode::soft, LabelMode::hard};
  ASPKDConfig base;
  int jobs = 1;
  // wall_ms is left at 0 unless set, keeping the CSV reproducible.
  bool record_timing = false;

  void validate() const;
};

struct MetricsRow {
  std::string run_id;
  std::string row_kind;  // "detail" or "aggregate"
  int per_class_budget = 0;
  std::string mode;
  std::string label_mode;
  std::optional<std::uint64_t> seed;  // empty on aggregate rows
  double agreement_accuracy = 0;      // mean on aggregate rows
  std::optional<double> agreement_std;
  std::optional<double> pseudo_label_accuracy;
  std::int64_t calls_used = 0;
  std::int64_t wall_ms = 0;
  std::string status;  // "ok", "failed: ..." or, for aggregates, "ok"/"partial"

  bool operator==(const MetricsRow&) const = default;
};

extern const char* const kMetricsHeader;

/// One detail row per (budget, mode, label mode, seed) in that nesting order,
/// then one aggregate row per (budget, mode, label mode). A failing run is
/// flagged in its status and excluded from aggregates.
std::vector<MetricsRow> run_sweep(const PreparedBenchmark& bench, const SweepSpec& spec);
std::vector<MetricsRow> aggregate_rows(std::span<const MetricsRow> detail);

void write_metrics_csv(std::span<const MetricsRow> rows, std::ostream& out);
void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path);
std::vector<MetricsRow> read_metrics_csv(std::istream& in);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

/// Runs fn(i) for i in [0, count) on up to `jobs` threads.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn);

}  // namespace extraction_lab
