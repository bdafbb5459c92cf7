#include "extraction_lab/harness.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <thread>
#include <tuple>

#include <spdlog/spdlog.h>

namespace extraction_lab {

TrainConfig teacher_train_defaults() {
  TrainConfig cfg;
  cfg.learning_rate = 5e-4;
  cfg.batch_size = 64;
  cfg.max_epochs = 100;
  cfg.patience = 10;
  cfg.lr_step_size = 5;
  cfg.lr_gamma = 0.95;
  return cfg;
}

TrainConfig student_train_defaults() {
  TrainConfig cfg;
  cfg.learning_rate = 9e-4;
  cfg.batch_size = 64;
  cfg.max_epochs = 100;
  cfg.patience = 10;
  cfg.lr_step_size = 20;
  cfg.lr_gamma = 0.95;
  return cfg;
}

TeacherResult train_teacher(const LabeledDataset& train, const LabeledDataset& test, const NetworkSpec& spec,
                            const TrainConfig& cfg, double validation_fraction) {
  if (train.size() == 0) throw std::invalid_argument("train_teacher: empty training set");
  if (train.input_dim() != spec.input_dim || train.num_classes != spec.num_classes)
    throw std::invalid_argument("train_teacher: dataset does not match the network spec");
  Random rng(cfg.seed);
  Network net = xavier_init<double>(spec, rng);
  auto [fit, val] = split_validation(train, validation_fraction, rng);
  const Eigen::MatrixXd fit_y = fit.one_hot_targets();
  const Eigen::MatrixXd val_y = val.one_hot_targets();
  const bool has_val = val.size() > 0;

  TeacherResult out;
  out.training = train_until_convergence(std::move(net), fit.features, fit_y, has_val ? &val.features : nullptr,
                                         has_val ? &val_y : nullptr, cfg, rng);
  out.teacher = out.training.network;
  out.test_accuracy = test.size() ? classification_accuracy(predicted_classes(out.teacher, test.features), test.labels) : 0.0;
  return out;
}

std::vector<int> predicted_classes(const Network& net, const Eigen::MatrixXd& samples) {
  std::vector<int> out(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    out[static_cast<std::size_t>(i)] = argmax(forward(net, samples.row(i).transpose()).logits);
  return out;
}

double classification_accuracy(std::span<const int> predicted, std::span<const int> expected) {
  if (predicted.size() != expected.size()) throw std::invalid_argument("classification_accuracy: length mismatch");
  if (predicted.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hits += predicted[i] == expected[i];
  return static_cast<double>(hits) / static_cast<double>(predicted.size());
}

double agreement_accuracy(const Network& student, const Eigen::MatrixXd& test_samples, std::span<const int> teacher_labels) {
  return classification_accuracy(predicted_classes(student, test_samples), teacher_labels);
}

double pseudo_label_accuracy(const ProxyPool& pool, std::span<const int> diagnostic_labels) {
  if (diagnostic_labels.size() != pool.size()) throw std::invalid_argument("pseudo_label_accuracy: label count differs from pool");
  std::size_t hits = 0, total = 0;
  for (std::size_t i : pool.active_indices()) {
    ++total;
    hits += pool.pseudo_class(i) == diagnostic_labels[i];
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

DatasetSpec Benchmark::proxy_spec(std::uint64_t seed) const {
  DatasetSpec p = true_data;
  p.per_class_count = proxy_per_class;
  p.distribution_shift = proxy_shift;
  p.seed = seed;
  return p;
}

Benchmark default_blobs_benchmark() {
  Benchmark b;
  b.true_data.generator = Generator::gaussian_blobs;
  b.true_data.num_classes = 10;
  b.true_data.input_dim = 8;
  b.true_data.per_class_count = 300;
  b.true_data.class_separation = 6.0;
  b.true_data.noise_scale = 1.0;
  b.true_data.seed = 7;
  b.proxy_shift = 0.3;
  b.proxy_per_class = 200;
  b.teacher_spec = {8, {64, 32}, 10};
  b.student_spec = {8, {32, 16}, 10};
  b.teacher_train = teacher_train_defaults();
  b.teacher_train.seed = 11;
  return b;
}

PreparedBenchmark prepare_benchmark(const Benchmark& bench) {
  PreparedBenchmark out;
  out.spec = bench;
  out.data = generate_true_dataset(bench.true_data);
  auto trained = train_teacher(out.data.train, out.data.test, bench.teacher_spec, bench.teacher_train);
  out.teacher = std::move(trained.teacher);
  out.teacher_accuracy = trained.test_accuracy;
  out.teacher_test_labels = predicted_classes(out.teacher, out.data.test.features);
  return out;
}

EvaluatedRun run_local_attack(const PreparedBenchmark& bench, const ProxyPool& pool, const ASPKDConfig& cfg) {
  LocalOracle oracle(bench.teacher, cfg.label_mode, cfg.budget(bench.teacher.spec.num_classes));

  std::vector<int> diagnostic;
  for (const auto& r : unbudgeted_reference_labels(oracle, pool.features)) diagnostic.push_back(r.predicted_class());
  AttackHooks hooks;
  hooks.after_pseudo_label = [&diagnostic](int, const ProxyPool& p) -> std::optional<double> {
    return pseudo_label_accuracy(p, diagnostic);
  };

  EvaluatedRun run{run_aspkd(oracle, pool, bench.spec.student_spec, cfg, hooks), 0.0, std::nullopt};
  run.agreement = agreement_accuracy(run.result.student, bench.data.test.features, bench.teacher_test_labels);
  run.result.report.agreement_accuracy = run.agreement;
  run.pseudo_label_accuracy = run.result.report.pseudo_label_accuracy;
  return run;
}

SummaryStats summarize(std::span<const double> values) {
  SummaryStats s;
  if (values.empty()) return s;
  double sum = 0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

std::vector<AblationRow> run_ablation_suite(const OracleFactory& make_oracle, const PoolFactory& make_pool,
                                            const Evaluator& evaluate, const NetworkSpec& student_spec,
                                            const ASPKDConfig& cfg, std::span<const std::uint64_t> seeds, int jobs) {
  if (seeds.size() < 2) throw std::invalid_argument("run_ablation_suite: need at least two seeds");
  constexpr AttackMode kModes[] = {AttackMode::vanilla, AttackMode::active_only, AttackMode::self_paced_only,
                                   AttackMode::full};
  constexpr std::size_t kNumModes = std::size(kModes);

  std::vector<double> acc(seeds.size() * kNumModes);
  std::vector<std::int64_t> calls(seeds.size() * kNumModes);
  parallel_for(acc.size(), jobs, [&](std::size_t job) {
    const std::size_t si = job / kNumModes, mi = job % kNumModes;
    ASPKDConfig run_cfg = cfg;
    run_cfg.mode = kModes[mi];
    run_cfg.seed = seeds[si];
    const auto oracle = make_oracle(cfg.budget(student_spec.num_classes));
    run_cfg.label_mode = oracle->label_mode();
    auto result = run_aspkd(*oracle, make_pool(seeds[si]), student_spec, run_cfg);
    acc[job] = evaluate(result.student);
    calls[job] = oracle->budget_status().used;
  });

  std::vector<AblationRow> rows;
  for (std::size_t mi = 0; mi < kNumModes; ++mi) {
    AblationRow row;
    row.mode = kModes[mi];
    row.seeds.assign(seeds.begin(), seeds.end());
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      row.accuracies.push_back(acc[si * kNumModes + mi]);
      row.calls_used.push_back(calls[si * kNumModes + mi]);
    }
    row.stats = summarize(row.accuracies);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation_table(std::span<const AblationRow> rows) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "mode         mean(%)  std(%)  calls\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(12) << to_string(r.mode) << std::right << std::setw(8) << 100 * r.stats.mean
        << std::setw(8) << 100 * r.stats.stddev << std::setw(7) << (r.calls_used.empty() ? 0 : r.calls_used.front())
        << '\n';
  }
  return out.str();
}

void SweepSpec::validate() const {
  if (per_class_budgets.empty()) throw std::invalid_argument("SweepSpec: no budgets");
  for (std::size_t i = 0; i < per_class_budgets.size(); ++i) {
    if (per_class_budgets[i] < 1) throw std::invalid_argument("SweepSpec: budgets must be positive");
    if (i && per_class_budgets[i] <= per_class_budgets[i - 1])
      throw std::invalid_argument("SweepSpec: budgets must be strictly increasing");
  }
  if (seeds.empty() || modes.empty() || label_modes.empty()) throw std::invalid_argument("SweepSpec: empty grid axis");
}

namespace {

std::string run_id(int budget, AttackMode mode, LabelMode label, std::optional<std::uint64_t> seed) {
  std::string id = "b" + std::to_string(budget) + "-" + to_string(mode) + "-" + to_string(label);
  if (seed) id += "-s" + std::to_string(*seed);
  return id;
}

}  // namespace

std::vector<MetricsRow> run_sweep(const PreparedBenchmark& bench, const SweepSpec& spec) {
  spec.validate();
  struct Job {
    int budget;
    AttackMode mode;
    LabelMode label;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (int b : spec.per_class_budgets)
    for (AttackMode m : spec.modes)
      for (LabelMode l : spec.label_modes)
        for (std::uint64_t s : spec.seeds) jobs.push_back({b, m, l, s});

  std::vector<MetricsRow> detail(jobs.size());
  parallel_for(jobs.size(), spec.jobs, [&](std::size_t i) {
    const Job& job = jobs[i];
    MetricsRow& row = detail[i];
    row.run_id = run_id(job.budget, job.mode, job.label, job.seed);
    row.row_kind = "detail";
    row.per_class_budget = job.budget;
    row.mode = to_string(job.mode);
    row.label_mode = to_string(job.label);
    row.seed = job.seed;

    ASPKDConfig cfg = spec.base;
    cfg.per_class_budget = job.budget;
    cfg.mode = job.mode;
    cfg.label_mode = job.label;
    cfg.seed = job.seed;
    const auto start = std::chrono::steady_clock::now();
    try {
      const auto pool = generate_proxy_pool(bench.spec.proxy_spec(job.seed));
      auto run = run_local_attack(bench, pool, cfg);
      row.agreement_accuracy = run.agreement;
      row.pseudo_label_accuracy = run.pseudo_label_accuracy;
      row.calls_used = run.result.report.calls_used;
      row.status = "ok";
    } catch (const std::exception& e) {
      spdlog::warn("sweep run {} failed: {}", row.run_id, e.what());
      row.status = std::string("failed: ") + e.what();
    }
    if (spec.record_timing)
      row.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - start).count();
  });

  auto rows = detail;
  auto agg = aggregate_rows(detail);
  rows.insert(rows.end(), agg.begin(), agg.end());
  return rows;
}

std::vector<MetricsRow> aggregate_rows(std::span<const MetricsRow> detail) {
  using Key = std::tuple<int, std::string, std::string>;
  std::vector<Key> order;
  std::map<Key, std::vector<const MetricsRow*>> groups;
  for (const auto& r : detail) {
    if (r.row_kind != "detail") continue;
    Key key{r.per_class_budget, r.mode, r.label_mode};
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }

  std::vector<MetricsRow> out;
  for (const auto& key : order) {
    const auto& members = groups[key];
    std::vector<double> acc, pseudo;
    MetricsRow agg;
    agg.per_class_budget = std::get<0>(key);
    agg.mode = std::get<1>(key);
    agg.label_mode = std::get<2>(key);
    agg.row_kind = "aggregate";
    bool all_pseudo = true;
    for (const auto* r : members) {
      agg.wall_ms += r->wall_ms;
      if (r->status != "ok") continue;
      acc.push_back(r->agreement_accuracy);
      agg.calls_used = std::max(agg.calls_used, r->calls_used);
      if (r->pseudo_label_accuracy)
        pseudo.push_back(*r->pseudo_label_accuracy);
      else
        all_pseudo = false;
    }
    const auto stats = summarize(acc);
    agg.run_id = "b" + std::to_string(agg.per_class_budget) + "-" + agg.mode + "-" + agg.label_mode + "-mean";
    agg.agreement_accuracy = stats.mean;
    agg.agreement_std = stats.stddev;
    if (all_pseudo && !pseudo.empty()) agg.pseudo_label_accuracy = summarize(pseudo).mean;
    agg.status = acc.size() == members.size() ? "ok" : "partial";
    out.push_back(std::move(agg));
  }
  return out;
}

const char* const kMetricsHeader =
    "run_id,row_kind,per_class_budget,mode,label_mode,seed,agreement_accuracy,agreement_std,pseudo_label_accuracy,"
    "calls_used,wall_ms,status";

namespace {

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c == '\n' ? ' ' : c;
  }
  return out + "\"";
}

std::vector<std::string> csv_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(std::move(cur));
  return out;
}

}  // namespace

void write_metrics_csv(std::span<const MetricsRow> rows, std::ostream& out) {
  out << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    out << csv_escape(r.run_id) << ',' << r.row_kind << ',' << r.per_class_budget << ',' << r.mode << ',' << r.label_mode
        << ',' << (r.seed ? std::to_string(*r.seed) : "") << ',' << format_double(r.agreement_accuracy) << ','
        << (r.agreement_std ? format_double(*r.agreement_std) : "") << ','
        << (r.pseudo_label_accuracy ? format_double(*r.pseudo_label_accuracy) : "") << ',' << r.calls_used << ','
        << r.wall_ms << ',' << csv_escape(r.status) << '\n';
  }
}

void write_metrics_csv(std::span<const MetricsRow> rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_metrics_csv(rows, out);
}

std::vector<MetricsRow> read_metrics_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) throw std::runtime_error("metrics csv: unexpected header");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = csv_fields(line);
    if (f.size() != 12) throw std::runtime_error("metrics csv: wrong field count in '" + line + "'");
    MetricsRow r;
    r.run_id = f[0];
    r.row_kind = f[1];
    r.per_class_budget = std::stoi(f[2]);
    r.mode = f[3];
    r.label_mode = f[4];
    if (!f[5].empty()) r.seed = std::stoull(f[5]);
    r.agreement_accuracy = std::stod(f[6]);
    if (!f[7].empty()) r.agreement_std = std::stod(f[7]);
    if (!f[8].empty()) r.pseudo_label_accuracy = std::stod(f[8]);
    r.calls_used = std::stoll(f[9]);
    r.wall_ms = std::stoll(f[10]);
    r.status = f[11];
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_metrics_csv(in);
}

}  // namespace extraction_lab
