#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "extraction_lab/aspkd.hpp"
#include "extraction_lab/checkpoint.hpp"
#include "extraction_lab/data.hpp"
#include "extraction_lab/harness.hpp"
#include "extraction_lab/oracle.hpp"
#include "extraction_lab/oracle_service.hpp"

namespace fs = std::filesystem;
using namespace extraction_lab;

namespace {

struct Options {
  // attack
  int budget_per_class = 4;
  int calls_per_round = 0;  // 0: derived from the budget
  std::size_t k = 5;
  double sigma = 17.0;
  std::string metric;  // empty: paired with the label mode
  std::vector<std::string> label_modes{"soft"};
  std::vector<std::string> modes{"full"};
  std::uint64_t seed = 0;
  int seeds = 5;
  int jobs = 1;
  std::string oracle = "local";
  std::string out;

  // data and models
  std::string generator = "gaussian_blobs";
  int classes = 10;
  int dim = 8;
  int per_class = 300;
  double separation = 6.0;
  double noise = 1.0;
  double shift = 0.3;
  int proxy_per_class = 200;
  std::vector<int> teacher_hidden{64, 32};
  std::vector<int> student_hidden{32, 16};
  std::uint64_t teacher_seed = 11;

  // subcommand specific
  std::string data_dir;
  std::string checkpoint;
  std::string student;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::vector<int> budgets{1, 2, 4, 8, 16, 32, 64, 128, 256};
  bool record_timing = false;
};

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("extraction-lab");
  spdlog::set_default_logger(logger);
  spdlog::level::level_enum level = spdlog::level::info;
  if (const char* env = std::getenv("EXTRACTION_LAB_LOG")) {
    level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") {
      level = spdlog::level::info;
      spdlog::warn("unknown EXTRACTION_LAB_LOG level '{}', using info", env);
    }
  }
  spdlog::set_level(level);
}

Benchmark make_benchmark(const Options& o) {
  Benchmark b = default_blobs_benchmark();
  b.true_data.generator = generator_from_string(o.generator);
  b.true_data.num_classes = o.classes;
  b.true_data.input_dim = o.dim;
  b.true_data.per_class_count = o.per_class;
  b.true_data.class_separation = o.separation;
  b.true_data.noise_scale = o.noise;
  b.true_data.seed = o.seed;
  b.proxy_shift = o.shift;
  b.proxy_per_class = o.proxy_per_class;
  b.teacher_spec = {o.dim, o.teacher_hidden, o.classes};
  b.student_spec = {o.dim, o.student_hidden, o.classes};
  b.teacher_train.seed = o.teacher_seed;
  return b;
}

ASPKDConfig make_attack_config(const Options& o) {
  ASPKDConfig cfg;
  cfg.per_class_budget = o.budget_per_class;
  if (o.calls_per_round > 0) cfg.calls_per_round = o.calls_per_round;
  cfg.k = o.k;
  cfg.sigma = o.sigma;
  if (!o.metric.empty()) cfg.metric = metric_from_string(o.metric);
  cfg.label_mode = label_mode_from_string(o.label_modes.front());
  cfg.mode = attack_mode_from_string(o.modes.front());
  cfg.train = student_train_defaults();
  cfg.seed = o.seed;
  return cfg;
}

std::vector<std::uint64_t> seed_list(int count) {
  if (count < 1) throw std::invalid_argument("--seeds must be at least 1");
  std::vector<std::uint64_t> seeds(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  return seeds;
}

void write_atomically(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
    if (!out.flush()) throw std::runtime_error("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_rows(const std::vector<MetricsRow>& rows, const std::string& out) {
  if (out.empty()) {
    write_metrics_csv(rows, std::cout);
    return;
  }
  std::ostringstream text;
  write_metrics_csv(rows, text);
  write_atomically(out, text.str());
  spdlog::info("wrote {} rows to {}", rows.size(), out);
}

bool is_url(const std::string& s) { return s.rfind("http://", 0) == 0; }

int cmd_gen_data(const Options& o) {
  if (o.out.empty()) throw std::invalid_argument("gen-data needs --out DIR");
  const Benchmark b = make_benchmark(o);
  const fs::path dir = o.out;
  fs::create_directories(dir);
  const TrueData data = generate_true_dataset(b.true_data);
  save_dataset(data.train, dir / "train.csv");
  save_dataset(data.test, dir / "test.csv");
  const ProxyPool pool = generate_proxy_pool(b.proxy_spec(o.seed));
  save_pool(pool, dir / "pool.csv", dir / "pool.pseudo.csv");
  std::cout << "train " << data.train.size() << ", test " << data.test.size() << ", pool " << pool.size() << " -> "
            << dir.string() << '\n';
  return 0;
}

int cmd_train_teacher(const Options& o) {
  if (o.data_dir.empty() || o.out.empty()) throw std::invalid_argument("train-teacher needs --data DIR and --out FILE");
  const fs::path dir = o.data_dir;
  const LabeledDataset train = load_dataset(dir / "train.csv", o.classes);
  const LabeledDataset test = load_dataset(dir / "test.csv", o.classes);
  TrainConfig cfg = teacher_train_defaults();
  cfg.seed = o.teacher_seed;
  const NetworkSpec spec{train.input_dim(), o.teacher_hidden, o.classes};
  const TeacherResult res = train_teacher(train, test, spec, cfg);
  write_atomically(o.out, checkpoint_to_string(res.teacher));
  std::cout << "teacher test accuracy " << res.test_accuracy << " after " << res.training.history.size()
            << " epochs -> " << o.out << '\n';
  return 0;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

int cmd_serve(const Options& o) {
  if (o.checkpoint.empty()) throw std::invalid_argument("serve needs --checkpoint FILE");
  Network teacher = load_checkpoint(o.checkpoint);
  const std::int64_t limit = static_cast<std::int64_t>(o.budget_per_class) * teacher.spec.num_classes;
  OracleService service(std::move(teacher), label_mode_from_string(o.label_modes.front()), limit, o.host, o.port);
  service.start();
  std::cout << "serving " << service.base_url() << " (budget " << limit << ")" << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  service.stop();
  const auto st = service.budget_status();
  spdlog::info("stopped after {}/{} calls", st.used, st.limit);
  return 0;
}

int cmd_attack(const Options& o) {
  if (o.data_dir.empty()) throw std::invalid_argument("attack needs --data DIR (pool.csv, optional test.csv)");
  if (o.modes.size() != 1 || o.label_modes.size() != 1)
    throw std::invalid_argument("attack takes a single --mode and --label-mode");
  const fs::path dir = o.data_dir;
  ASPKDConfig cfg = make_attack_config(o);

  std::unique_ptr<Oracle> oracle;
  std::optional<Network> teacher;
  if (!o.checkpoint.empty()) teacher = load_checkpoint(o.checkpoint);
  if (o.oracle == "local") {
    if (!teacher) throw std::invalid_argument("--oracle local needs --checkpoint FILE");
    oracle = std::make_unique<LocalOracle>(*teacher, cfg.label_mode, cfg.budget(teacher->spec.num_classes));
  } else if (is_url(o.oracle)) {
    oracle = std::make_unique<RemoteOracle>(o.oracle);
    cfg.label_mode = oracle->label_mode();
  } else {
    throw std::invalid_argument("--oracle must be 'local' or an http:// URL");
  }

  const int classes = oracle->num_classes();
  ProxyPool pool = pool_from_dataset(load_dataset(dir / "pool.csv", classes));
  const NetworkSpec student_spec{oracle->input_dim(), o.student_hidden, classes};

  AttackHooks hooks;
  std::vector<int> diagnostic;
  if (o.oracle == "local") {
    for (const auto& r : unbudgeted_reference_labels(*oracle, pool.features)) diagnostic.push_back(r.predicted_class());
    hooks.after_pseudo_label = [&diagnostic](int, const ProxyPool& p) -> std::optional<double> {
      return pseudo_label_accuracy(p, diagnostic);
    };
  }

  AttackResult result = run_aspkd(*oracle, std::move(pool), student_spec, cfg, hooks);
  const fs::path test_path = dir / "test.csv";
  if (teacher && fs::exists(test_path)) {
    const LabeledDataset test = load_dataset(test_path, classes);
    result.report.agreement_accuracy =
        agreement_accuracy(result.student, test.features, predicted_classes(*teacher, test.features));
  }

  std::cout << "calls " << result.report.calls_used << "/" << result.report.budget << ", rounds "
            << result.report.rounds.size();
  if (result.report.agreement_accuracy) std::cout << ", agreement " << *result.report.agreement_accuracy;
  if (result.report.pseudo_label_accuracy) std::cout << ", pseudo-label accuracy " << *result.report.pseudo_label_accuracy;
  std::cout << '\n';
  if (!o.student.empty()) write_atomically(o.student, checkpoint_to_string(result.student));
  if (!o.out.empty()) write_atomically(o.out, report_to_json(result.report));
  return 0;
}

int cmd_ablate(const Options& o) {
  if (o.oracle != "local") throw std::invalid_argument("ablate runs against the in-process oracle only");
  const PreparedBenchmark bench = prepare_benchmark(make_benchmark(o));
  spdlog::info("teacher test accuracy {:.4f}", bench.teacher_accuracy);
  const ASPKDConfig cfg = make_attack_config(o);
  const auto seeds = seed_list(o.seeds);

  const auto rows = run_ablation_suite(
      [&](std::int64_t budget) { return std::make_unique<LocalOracle>(bench.teacher, cfg.label_mode, budget); },
      [&](std::uint64_t seed) { return generate_proxy_pool(bench.spec.proxy_spec(seed)); },
      [&](const Network& student) {
        return agreement_accuracy(student, bench.data.test.features, bench.teacher_test_labels);
      },
      bench.spec.student_spec, cfg, seeds, o.jobs);
  std::cerr << format_ablation_table(rows);

  std::vector<MetricsRow> detail;
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.seeds.size(); ++i) {
      MetricsRow m;
      m.run_id = "b" + std::to_string(cfg.per_class_budget) + "-" + to_string(r.mode) + "-" + to_string(cfg.label_mode) +
                 "-s" + std::to_string(r.seeds[i]);
      m.row_kind = "detail";
      m.per_class_budget = cfg.per_class_budget;
      m.mode = to_string(r.mode);
      m.label_mode = to_string(cfg.label_mode);
      m.seed = r.seeds[i];
      m.agreement_accuracy = r.accuracies[i];
      m.calls_used = r.calls_used[i];
      m.status = "ok";
      detail.push_back(std::move(m));
    }
  }
  auto all = detail;
  const auto agg = aggregate_rows(detail);
  all.insert(all.end(), agg.begin(), agg.end());
  write_rows(all, o.out);
  return 0;
}

int cmd_sweep(const Options& o) {
  if (o.oracle != "local") throw std::invalid_argument("sweep runs against the in-process oracle only");
  const PreparedBenchmark bench = prepare_benchmark(make_benchmark(o));
  spdlog::info("teacher test accuracy {:.4f}", bench.teacher_accuracy);
  SweepSpec spec;
  spec.per_class_budgets = o.budgets;
  spec.seeds = seed_list(o.seeds);
  spec.modes.clear();
  for (const auto& m : o.modes) spec.modes.push_back(attack_mode_from_string(m));
  spec.label_modes.clear();
  for (const auto& l : o.label_modes) spec.label_modes.push_back(label_mode_from_string(l));
  spec.base = make_attack_config(o);
  spec.jobs = o.jobs;
  spec.record_timing = o.record_timing;
  write_rows(run_sweep(bench, spec), o.out);
  return 0;
}

int cmd_eval(const Options& o) {
  if (o.student.empty() || o.checkpoint.empty() || o.data_dir.empty())
    throw std::invalid_argument("eval needs --student FILE, --checkpoint FILE and --data DIR");
  const Network student = load_checkpoint(o.student);
  const Network teacher = load_checkpoint(o.checkpoint);
  const LabeledDataset test = load_dataset(fs::path(o.data_dir) / "test.csv", teacher.spec.num_classes);
  const double agree = agreement_accuracy(student, test.features, predicted_classes(teacher, test.features));
  const double acc = classification_accuracy(predicted_classes(student, test.features), test.labels);
  std::cout << "agreement " << agree << ", ground-truth accuracy " << acc << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  Options o;
  CLI::App app{"Model-extraction lab: teachers, a budgeted oracle and ASPKD attacks"};
  app.set_config("--config", "", "TOML/INI config document; command-line flags take precedence");
  app.require_subcommand(1);

  const std::string attack = "Attack";
  app.add_option("--budget-per-class", o.budget_per_class, "Teacher calls per class (n = value * classes)")
      ->check(CLI::PositiveNumber)->group(attack)->capture_default_str();
  app.add_option("--calls-per-round", o.calls_per_round, "Calls per round s (default derived from the budget)")
      ->check(CLI::NonNegativeNumber)->group(attack);
  app.add_option("--k", o.k, "Neighbors for pseudo-labeling")->check(CLI::PositiveNumber)->group(attack)->capture_default_str();
  app.add_option("--sigma", o.sigma, "RBF width of the active sampler")->check(CLI::PositiveNumber)->group(attack)->capture_default_str();
  app.add_option("--metric", o.metric, "Latent distance (default: cosine for soft, euclidean for hard)")
      ->check(CLI::IsMember({"euclidean", "cosine"}))->group(attack);
  app.add_option("--label-mode", o.label_modes, "Teacher answer kind; sweep accepts a list")
      ->check(CLI::IsMember({"soft", "hard"}))->delimiter(',')->group(attack)->capture_default_str();
  app.add_option("--mode", o.modes, "Attack arm; sweep accepts a list")
      ->check(CLI::IsMember({"vanilla", "active", "self-paced", "full"}))->delimiter(',')->group(attack)->capture_default_str();
  app.add_option("--seed", o.seed, "Attack seed, also the data seed for gen-data")->group(attack)->capture_default_str();
  app.add_option("--seeds", o.seeds, "Number of seeds (0..N-1) for ablate and sweep")->check(CLI::PositiveNumber)->group(attack)->capture_default_str();
  app.add_option("--jobs", o.jobs, "Concurrent runs")->check(CLI::PositiveNumber)->group(attack)->capture_default_str();
  app.add_option("--oracle", o.oracle, "'local' or the base URL of a running service")->group(attack)->capture_default_str();
  app.add_option("--out", o.out, "Output file or directory")->group(attack);

  const std::string data = "Data and models";
  app.add_option("--generator", o.generator)->check(CLI::IsMember({"gaussian_blobs", "concentric_rings", "xor_grid"}))->group(data)->capture_default_str();
  app.add_option("--classes", o.classes)->check(CLI::Range(2, 1000))->group(data)->capture_default_str();
  app.add_option("--dim", o.dim)->check(CLI::PositiveNumber)->group(data)->capture_default_str();
  app.add_option("--per-class", o.per_class, "True samples per class")->check(CLI::PositiveNumber)->group(data)->capture_default_str();
  app.add_option("--separation", o.separation)->group(data)->capture_default_str();
  app.add_option("--noise", o.noise)->group(data)->capture_default_str();
  app.add_option("--shift", o.shift, "Proxy distribution shift")->group(data)->capture_default_str();
  app.add_option("--proxy-per-class", o.proxy_per_class)->check(CLI::PositiveNumber)->group(data)->capture_default_str();
  app.add_option("--teacher-hidden", o.teacher_hidden)->delimiter(',')->group(data)->capture_default_str();
  app.add_option("--student-hidden", o.student_hidden)->delimiter(',')->group(data)->capture_default_str();
  app.add_option("--teacher-seed", o.teacher_seed)->group(data)->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "Write train/test/pool CSVs to --out DIR");
  auto* train = app.add_subcommand("train-teacher", "Train a teacher on --data DIR, checkpoint to --out");
  train->add_option("--data", o.data_dir)->required();
  auto* serve = app.add_subcommand("serve", "Expose a teacher checkpoint over HTTP with a call budget");
  serve->add_option("--checkpoint", o.checkpoint)->required();
  serve->add_option("--host", o.host)->capture_default_str();
  serve->add_option("--port", o.port, "0 picks a free port")->capture_default_str();
  auto* atk = app.add_subcommand("attack", "Run one attack; --out receives the JSON report");
  atk->add_option("--data", o.data_dir, "Directory with pool.csv (and test.csv for evaluation)")->required();
  atk->add_option("--checkpoint", o.checkpoint, "Teacher checkpoint (local oracle, evaluation)");
  atk->add_option("--student", o.student, "Also write the student checkpoint here");
  auto* ablate = app.add_subcommand("ablate", "Four-arm ablation on the generated benchmark");
  auto* sweep = app.add_subcommand("sweep", "Budget sweep on the generated benchmark");
  sweep->add_option("--budgets", o.budgets, "Calls per class, strictly increasing")->delimiter(',')->capture_default_str();
  sweep->add_flag("--record-timing", o.record_timing, "Fill wall_ms (makes the CSV non-reproducible)");
  auto* eval = app.add_subcommand("eval", "Agreement of a student checkpoint with its teacher on --data DIR/test.csv");
  eval->add_option("--student", o.student)->required();
  eval->add_option("--checkpoint", o.checkpoint)->required();
  eval->add_option("--data", o.data_dir)->required();
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return cmd_gen_data(o);
    if (*train) return cmd_train_teacher(o);
    if (*serve) return cmd_serve(o);
    if (*atk) return cmd_attack(o);
    if (*ablate) return cmd_ablate(o);
    if (*sweep) return cmd_sweep(o);
    if (*eval) return cmd_eval(o);
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
