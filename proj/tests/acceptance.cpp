// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "extraction_lab/aspkd.hpp"
#include "extraction_lab/harness.hpp"
#include "extraction_lab/oracle_service.hpp"
#include "gradcheck.hpp"
#include "reference.hpp"

// after Eigen: resolv.h defines _res
#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

using namespace extraction_lab;

namespace {

// Tolerances and thresholds.
constexpr double kGradTol = 1e-4;
constexpr double kAdamTol = 1e-10;
constexpr double kSoftmaxTol = 1e-9;
constexpr double kRbfTol = 1e-12;
constexpr double kFullOverVanilla = 0.03;
constexpr double kArmSlack = 0.01;
constexpr double kPseudoLabelFloor = 0.75;
constexpr int kFuzzRuns = 200;
constexpr int kFixtures = 120;
constexpr double kBudgetSeconds = 120;
constexpr double kAblationSecondsPerSeed = 300;
constexpr double kTrendSeconds = 600;

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void run_criterion(int id, const char* name, const std::function<Outcome()>& body) {
  const auto start = Clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(Clock::now() - start).count();
  if (!out.pass) ++failures;
  std::printf("%s %d %s: %s [%.1fs]\n", out.pass ? "PASS" : "FAIL", id, name, out.detail.c_str(), secs);
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

Eigen::MatrixXd random_matrix(Eigen::Index r, Eigen::Index c, Random& rng) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Eigen::MatrixXd random_targets(Eigen::Index r, int classes, Random& rng) {
  Eigen::MatrixXd t(r, classes);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform() + 0.01;
  for (Eigen::Index i = 0; i < r; ++i) t.row(i) /= t.row(i).sum();
  return t;
}

const PreparedBenchmark& benchmark() {
  static const PreparedBenchmark b = prepare_benchmark(default_blobs_benchmark());
  return b;
}

ASPKDConfig benchmark_config() {
  ASPKDConfig cfg;
  cfg.train = student_train_defaults();
  return cfg;
}

Outcome budget_exactness() {
  const auto start = Clock::now();
  Random rng(2024);
  int bad = 0;
  std::int64_t total_calls = 0;
  for (int run = 0; run < kFuzzRuns; ++run) {
    DatasetSpec spec;
    spec.num_classes = 2 + static_cast<int>(rng.index(4));
    spec.input_dim = 2 + static_cast<int>(rng.index(3));
    spec.per_class_count = 12;
    spec.seed = rng();
    const ProxyPool pool = generate_proxy_pool(spec);
    Random init(rng());
    const Network teacher = xavier_init<double>(NetworkSpec{spec.input_dim, {6}, spec.num_classes}, init);

    ASPKDConfig cfg;
    cfg.per_class_budget = 1 + static_cast<int>(rng.index(8));
    if (rng.index(2)) cfg.calls_per_round = 1 + static_cast<int>(rng.index(12));
    cfg.mode = static_cast<AttackMode>(rng.index(4));
    cfg.label_mode = rng.index(2) ? LabelMode::soft : LabelMode::hard;
    cfg.seed = rng();
    cfg.train.max_epochs = 2;
    cfg.train.patience = 1;
    cfg.train.batch_size = 16;
    const std::int64_t n = cfg.budget(spec.num_classes);

    LocalOracle inner(teacher, cfg.label_mode, n);
    CountingOracle counting(inner);
    const auto res = run_aspkd(counting, pool, NetworkSpec{spec.input_dim, {5, 4}, spec.num_classes}, cfg);
    bool ok = counting.successes() == n && counting.refusals() == 0 && res.report.calls_used == n;
    std::set<std::size_t> distinct(res.labeled.pool_index.begin(), res.labeled.pool_index.end());
    ok = ok && static_cast<std::int64_t>(distinct.size()) == n;
    ok = ok && static_cast<std::int64_t>(res.report.rounds.size()) == cfg.rounds(spec.num_classes);
    try {
      counting.query(pool.features.row(0).transpose());
      ok = false;
    } catch (const BudgetExhausted&) {
    }
    ok = ok && counting.successes() == n && inner.budget_status().used == n;
    bad += !ok;
    total_calls += counting.successes();
  }

  OracleService service(benchmark().teacher, LabelMode::soft, 100);
  const int port = service.start();
  std::atomic<int> ok200{0}, ok429{0}, other{0};
  std::vector<std::thread> clients;
  for (int w = 0; w < 16; ++w)
    clients.emplace_back([&, w] {
      httplib::Client cli("127.0.0.1", port);
      for (int i = 0; i < 10; ++i) {
        const std::vector<double> f(8, 0.1 * w + 0.01 * i);
        auto r = cli.Post("/v1/predict", nlohmann::json{{"features", f}}.dump(), "application/json");
        if (r && r->status == 200)
          ++ok200;
        else if (r && r->status == 429)
          ++ok429;
        else
          ++other;
      }
    });
  for (auto& c : clients) c.join();
  service.stop();

  const double secs = seconds_since(start);
  Outcome out;
  out.pass = bad == 0 && ok200 == 100 && ok429 == 60 && other == 0 && secs < kBudgetSeconds;
  out.detail = std::to_string(kFuzzRuns - bad) + "/" + std::to_string(kFuzzRuns) + " fuzzed runs exact (" +
               std::to_string(total_calls) + " calls); service 200=" + std::to_string(ok200) +
               " 429=" + std::to_string(ok429) + " other=" + std::to_string(other);
  return out;
}

Outcome numerical_core() {
  Random rng(99);
  double worst_grad = 0;
  for (int t = 0; t < 10; ++t) {
    NetworkSpec spec;
    spec.input_dim = 2 + static_cast<int>(rng.index(6));
    const int depth = 1 + static_cast<int>(rng.index(3));
    for (int i = 0; i < depth; ++i) spec.hidden_sizes.push_back(2 + static_cast<int>(rng.index(8)));
    spec.num_classes = 2 + static_cast<int>(rng.index(5));
    Network net = xavier_init<double>(spec, rng);
    for (auto& b : net.biases) b.setConstant(0.05);
    const auto m = static_cast<Eigen::Index>(1 + rng.index(6));
    worst_grad = std::max(worst_grad, gradcheck::max_rel_error(net, random_matrix(m, spec.input_dim, rng),
                                                               random_targets(m, spec.num_classes, rng)));
  }

  Network net = xavier_init<double>(NetworkSpec{5, {7, 4}, 3}, rng);
  const Network before = net;
  Network grads = backward(net, random_matrix(6, 5, rng), random_targets(6, 3, rng));
  AdamState state = AdamState::for_network(net);
  adam_step(net, grads, state, 1e-3);
  Network b = before;
  auto p0 = gradcheck::params(b), p1 = gradcheck::params(net), pg = gradcheck::params(grads);
  double worst_adam = 0;
  for (std::size_t i = 0; i < pg.size(); ++i) {
    const double m = 0.1 * *pg[i], v = 0.001 * *pg[i] * *pg[i];
    const double expected = *p0[i] - 1e-3 * (m / 0.1) / (std::sqrt(v / 0.001) + 1e-8);
    worst_adam = std::max(worst_adam, std::abs(*p1[i] - expected));
  }

  double worst_softmax = 0;
  bool finite = true;
  for (int t = 0; t < 1000; ++t) {
    Eigen::VectorXd z(1 + static_cast<Eigen::Index>(rng.index(20)));
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = (2 * rng.uniform() - 1) * 1e3;
    const Eigen::VectorXd p = softmax(z);
    finite = finite && p.allFinite() && p.minCoeff() >= 0;
    worst_softmax = std::max(worst_softmax, std::abs(p.sum() - 1));
  }

  Outcome out;
  out.pass = worst_grad < kGradTol && worst_adam < kAdamTol && worst_softmax < kSoftmaxTol && finite;
  char buf[200];
  std::snprintf(buf, sizeof buf, "grad rel err %.2e, Adam abs err %.2e, softmax |sum-1| %.2e", worst_grad, worst_adam,
                worst_softmax);
  out.detail = buf;
  return out;
}

Outcome oracle_equivalence() {
  Random rng(7);
  int knn_ok = 0, centroid_ok = 0, select_ok = 0, label_ok = 0;
  for (int t = 0; t < kFixtures; ++t) {
    // kNN and pseudo-labels over random latents, half on a coarse grid to force ties
    const int classes = 2 + static_cast<int>(rng.index(4));
    const auto n = static_cast<Eigen::Index>(1 + rng.index(50));
    Eigen::MatrixXd pts = random_matrix(n, 3, rng);
    if (t % 2) pts = pts.unaryExpr([](double v) { return std::round(v); });
    Eigen::MatrixXd soft(n, classes);
    std::vector<int> hard(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int c = 0; c < classes; ++c) soft(i, c) = rng.uniform() + 1e-3;
      soft.row(i) /= soft.row(i).sum();
      hard[static_cast<std::size_t>(i)] = static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
    }
    Eigen::VectorXd q = random_matrix(1, 3, rng).row(0).transpose();
    if (t % 2) q = q.unaryExpr([](double v) { return std::round(v); });
    const std::size_t k = 1 + rng.index(7);
    bool knn_match = true, label_match = true;
    for (auto metric : {DistanceMetric::cosine, DistanceMetric::euclidean}) {
      auto ref = reference::sorted_neighbors(q, pts, metric == DistanceMetric::cosine);
      ref.resize(std::min<std::size_t>(k, ref.size()));
      const auto nb = knn(q, pts, k, metric);
      for (std::size_t j = 0; j < ref.size(); ++j)
        knn_match = knn_match && nb.size() == ref.size() && nb.indices[j] == ref[j].second && nb.distances[j] == ref[j].first;
      label_match = label_match && (soft_pseudo_label(nb, soft) - reference::soft_label(ref, soft)).cwiseAbs().maxCoeff() < 1e-12;
      label_match = label_match && hard_pseudo_label(nb, hard, classes) == reference::hard_label(ref, hard, classes);
    }
    knn_ok += knn_match;
    label_ok += label_match;

    // centroids and nearest-centroid assignment
    std::vector<int> keys(static_cast<std::size_t>(n));
    for (auto& c : keys) c = static_cast<int>(rng.index(static_cast<std::size_t>(classes)));
    const auto set = compute_centroids(pts, keys, classes);
    const auto [cents, counts] = reference::centroids(pts, keys, classes);
    bool cent_match = set.counts == counts && (set.centroids - cents).cwiseAbs().maxCoeff() < 1e-12;
    for (Eigen::Index i = 0; i < n; ++i)
      cent_match = cent_match && nearest_centroid(pts.row(i).transpose(), set) == reference::nearest(pts.row(i).transpose(), cents, counts);
    centroid_ok += cent_match;

    // selection batch on a pool
    DatasetSpec spec;
    spec.num_classes = classes;
    spec.input_dim = 3;
    spec.per_class_count = 2 + static_cast<int>(rng.index(static_cast<std::size_t>(50 / classes - 1)));
    spec.seed = rng();
    ProxyPool pool = generate_proxy_pool(spec);
    for (std::size_t i = 0; i < pool.size(); ++i)
      if (rng.index(4) == 0) pool.promote(i);
    const auto ids = pool.active_indices();
    if (ids.empty()) {
      ++select_ok;
      continue;
    }
    Random init(rng());
    const Network student = xavier_init<double>(NetworkSpec{3, {6, 4}, classes}, init);
    SamplerConfig scfg;
    scfg.sigma = 0.1 + 3 * rng.uniform();
    const std::size_t count = 1 + rng.index(ids.size());
    Eigen::MatrixXd z(static_cast<Eigen::Index>(ids.size()), 4);
    std::vector<int> pk;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      z.row(static_cast<Eigen::Index>(i)) = latents(student, pool.features.row(static_cast<Eigen::Index>(ids[i])));
      pk.push_back(pool.pseudo_class(ids[i]));
    }
    const std::uint64_t seed = rng();
    Random r1(seed), r2(seed);
    select_ok += select_batch(pool, student, scfg, count, r1) == reference::select(z, pk, ids, classes, scfg.sigma, count, r2);
  }
  Outcome out;
  out.pass = knn_ok == kFixtures && centroid_ok == kFixtures && select_ok == kFixtures && label_ok == kFixtures;
  const auto f = "/" + std::to_string(kFixtures);
  out.detail = "kNN " + std::to_string(knn_ok) + f + ", centroid " + std::to_string(centroid_ok) + f + ", selection " +
               std::to_string(select_ok) + f + ", pseudo-label " + std::to_string(label_ok) + f;
  return out;
}

Outcome rbf_checks() {
  const double at_zero = rbf_weight(0.0, 17.0);
  const double at_578 = rbf_weight(578.0, 17.0);
  const double err = std::max(std::abs(at_zero - 1.0), std::abs(at_578 - std::exp(-1.0)));
  Random rng(31);
  int monotone = 0;
  for (int t = 0; t < 1000; ++t) {
    const double sigma = 0.5 + 30 * rng.uniform();
    // squared distances up to 20 sigma^2, well inside double range
    const double scale = 10 * sigma * sigma;
    const double a = scale * rng.uniform();
    const double b = a + 1e-6 * scale + scale * rng.uniform();
    monotone += rbf_weight(a, sigma) > rbf_weight(b, sigma);
  }
  Outcome out;
  out.pass = err < kRbfTol && monotone == 1000;
  char buf[160];
  std::snprintf(buf, sizeof buf, "max point error %.1e, strictly decreasing on %d/1000 pairs", err, monotone);
  out.detail = buf;
  return out;
}

Outcome ablation_direction() {
  const auto& bench = benchmark();
  ASPKDConfig cfg = benchmark_config();
  cfg.per_class_budget = 4;
  std::vector<std::uint64_t> seeds(10);
  for (std::size_t i = 0; i < seeds.size(); ++i) seeds[i] = i;
  const auto start = Clock::now();
  const auto rows = run_ablation_suite(
      [&](std::int64_t budget) { return std::make_unique<LocalOracle>(bench.teacher, LabelMode::soft, budget); },
      [&](std::uint64_t seed) { return generate_proxy_pool(bench.spec.proxy_spec(seed)); },
      [&](const Network& s) { return agreement_accuracy(s, bench.data.test.features, bench.teacher_test_labels); },
      bench.spec.student_spec, cfg, seeds);
  const double per_seed = seconds_since(start) / static_cast<double>(seeds.size());
  std::map<AttackMode, double> mean;
  for (const auto& r : rows) mean[r.mode] = r.stats.mean;
  const double vanilla = mean[AttackMode::vanilla];
  Outcome out;
  out.pass = mean[AttackMode::full] - vanilla >= kFullOverVanilla && mean[AttackMode::active_only] >= vanilla - kArmSlack &&
             mean[AttackMode::self_paced_only] >= vanilla - kArmSlack && per_seed < kAblationSecondsPerSeed;
  out.detail = "vanilla " + fmt(vanilla) + ", active " + fmt(mean[AttackMode::active_only]) + ", self-paced " +
               fmt(mean[AttackMode::self_paced_only]) + ", full " + fmt(mean[AttackMode::full]) + " (full-vanilla " +
               fmt(mean[AttackMode::full] - vanilla) + ", " + fmt(per_seed, 1) + "s/seed)";
  return out;
}

// Shared sweep for the budget trend and pseudo-label criteria.
const std::vector<MetricsRow>& trend_rows() {
  static const std::vector<MetricsRow> rows = [] {
    SweepSpec spec;
    spec.per_class_budgets = {2, 8, 16, 64};
    spec.seeds = {0, 1, 2, 3, 4};
    spec.modes = {AttackMode::full};
    spec.label_modes = {LabelMode::soft, LabelMode::hard};
    spec.base = benchmark_config();
    return run_sweep(benchmark(), spec);
  }();
  return rows;
}

const MetricsRow& aggregate(int budget, const std::string& label) {
  for (const auto& r : trend_rows())
    if (r.row_kind == "aggregate" && r.per_class_budget == budget && r.label_mode == label) return r;
  throw std::logic_error("missing aggregate row");
}

Outcome budget_trend() {
  const auto start = Clock::now();
  trend_rows();
  const double secs = seconds_since(start);
  Outcome out;
  out.pass = secs < kTrendSeconds;
  for (const char* label : {"soft", "hard"}) {
    const auto& lo = aggregate(2, label);
    const auto& hi = aggregate(64, label);
    out.pass = out.pass && lo.status == "ok" && hi.status == "ok" && hi.agreement_accuracy > lo.agreement_accuracy;
    out.detail += std::string(label) + " 2/class " + fmt(lo.agreement_accuracy) + " -> 64/class " + fmt(hi.agreement_accuracy) + "; ";
  }
  out.detail += "sweep " + fmt(secs, 1) + "s";
  return out;
}

Outcome pseudo_label_quality() {
  Outcome out;
  double worst_run = 1;
  for (int budget : {8, 16, 64}) {
    const auto& agg = aggregate(budget, "soft");
    const double acc = agg.pseudo_label_accuracy.value_or(0);
    out.pass = out.pass && agg.pseudo_label_accuracy && acc >= kPseudoLabelFloor;
    out.detail += std::to_string(budget) + "/class " + fmt(acc) + "; ";
    for (const auto& r : trend_rows())
      if (r.row_kind == "detail" && r.per_class_budget == budget && r.label_mode == "soft" && r.pseudo_label_accuracy)
        worst_run = std::min(worst_run, *r.pseudo_label_accuracy);
  }
  out.pass = out.pass && worst_run >= kPseudoLabelFloor;
  out.detail += "worst single run " + fmt(worst_run) + ", floor " + fmt(kPseudoLabelFloor, 2);
  return out;
}

Outcome remote_equivalence() {
  const auto& bench = benchmark();
  ASPKDConfig cfg = benchmark_config();
  cfg.per_class_budget = 4;
  cfg.seed = 5;
  const std::int64_t n = cfg.budget(10);
  const auto pool = generate_proxy_pool(bench.spec.proxy_spec(5));

  LocalOracle local(bench.teacher, LabelMode::soft, n);
  const auto a = run_aspkd(local, pool, bench.spec.student_spec, cfg);

  OracleService service(bench.teacher, LabelMode::soft, n);
  service.start();
  RemoteOracle remote(service.base_url());
  const auto b = run_aspkd(remote, pool, bench.spec.student_spec, cfg);
  service.stop();

  Outcome out;
  out.pass = a.student == b.student && a.report.student_checkpoint == b.report.student_checkpoint;
  out.detail = std::string(out.pass ? "bitwise identical" : "students differ") + " after " + std::to_string(n) +
               " calls over " + std::to_string(b.report.rounds.size()) + " rounds";
  return out;
}

Outcome sweep_determinism() {
  SweepSpec spec;
  spec.per_class_budgets = {1, 2, 4};
  spec.seeds = {0, 1};
  spec.modes = {AttackMode::vanilla, AttackMode::full};
  spec.label_modes = {LabelMode::soft, LabelMode::hard};
  spec.base = benchmark_config();
  spec.jobs = 3;
  std::ostringstream first, second;
  write_metrics_csv(run_sweep(benchmark(), spec), first);
  write_metrics_csv(run_sweep(benchmark(), spec), second);
  Outcome out;
  out.pass = first.str() == second.str();
  out.detail = std::to_string(first.str().size()) + " bytes, " + (out.pass ? "identical" : "different");
  return out;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  run_criterion(1, "budget exactness", budget_exactness);
  run_criterion(2, "numerical core", numerical_core);
  run_criterion(3, "brute-force equivalence", oracle_equivalence);
  run_criterion(4, "RBF weight", rbf_checks);
  run_criterion(5, "ablation direction", ablation_direction);
  run_criterion(6, "budget trend", budget_trend);
  run_criterion(7, "pseudo-label accuracy", pseudo_label_quality);
  run_criterion(8, "remote equals local", remote_equivalence);
  run_criterion(9, "sweep determinism", sweep_determinism);
  std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
