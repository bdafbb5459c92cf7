#include "extraction_lab/aspkd.hpp"

#include <chrono>
#include <cstring>
#include <stdexcept>

#include <json.hpp>
#include <spdlog/spdlog.h>

#include "extraction_lab/checkpoint.hpp"

namespace extraction_lab {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const std::vector<std::size_t>& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  return out;
}

Eigen::MatrixXd stack(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  Eigen::MatrixXd out(a.rows() + b.rows(), a.cols());
  out.topRows(a.rows()) = a;
  out.bottomRows(b.rows()) = b;
  return out;
}

}  // namespace

std::string to_string(AttackMode mode) {
  switch (mode) {
    case AttackMode::vanilla: return "vanilla";
    case AttackMode::active_only: return "active";
    case AttackMode::self_paced_only: return "self-paced";
    case AttackMode::full: return "full";
  }
  return "unknown";
}

AttackMode attack_mode_from_string(const std::string& name) {
  if (name == "vanilla") return AttackMode::vanilla;
  if (name == "active" || name == "active_only") return AttackMode::active_only;
  if (name == "self-paced" || name == "self_paced" || name == "self_paced_only") return AttackMode::self_paced_only;
  if (name == "full") return AttackMode::full;
  throw std::invalid_argument("unknown attack mode '" + name + "'");
}

bool uses_active_selection(AttackMode mode) { return mode == AttackMode::active_only || mode == AttackMode::full; }
bool uses_pseudo_labels(AttackMode mode) { return mode == AttackMode::self_paced_only || mode == AttackMode::full; }

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::select_active: return "select_active";
    case Phase::select_uniform: return "select_uniform";
    case Phase::query: return "query";
    case Phase::supervised: return "supervised";
    case Phase::pseudo_label: return "pseudo_label";
    case Phase::joint: return "joint";
  }
  return "unknown";
}

std::int64_t ASPKDConfig::effective_calls_per_round(int num_classes) const {
  const std::int64_t n = budget(num_classes);
  if (mode == AttackMode::vanilla) return n;
  if (calls_per_round) return std::min<std::int64_t>(*calls_per_round, n);
  if (per_class_budget == 1) return n;
  if (per_class_budget == 2) return (n + 1) / 2;
  return (n + 2) / 3;
}

std::int64_t ASPKDConfig::rounds(int num_classes) const {
  const std::int64_t n = budget(num_classes);
  const std::int64_t s = effective_calls_per_round(num_classes);
  return (n + s - 1) / s;
}

void ASPKDConfig::validate() const {
  if (per_class_budget < 1) throw std::invalid_argument("ASPKDConfig: per_class_budget must be >= 1");
  if (calls_per_round && *calls_per_round < 1) throw std::invalid_argument("ASPKDConfig: calls_per_round must be >= 1");
  if (k < 1) throw std::invalid_argument("ASPKDConfig: k must be >= 1");
  if (!(sigma > 0)) throw std::invalid_argument("ASPKDConfig: sigma must be > 0");
  if (!(validation_fraction >= 0 && validation_fraction < 1))
    throw std::invalid_argument("ASPKDConfig: validation_fraction must be in [0, 1)");
  train.validate();
}

std::uint64_t pool_hash(const ProxyPool& pool) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (Eigen::Index i = 0; i < pool.pseudo_labels.rows(); ++i)
    for (Eigen::Index c = 0; c < pool.pseudo_labels.cols(); ++c) {
      const double v = pool.pseudo_labels(i, c);
      mix(&v, sizeof v);
    }
  mix(pool.active.data(), pool.active.size());
  return h;
}

AttackResult run_aspkd(Oracle& oracle, ProxyPool pool, const NetworkSpec& student_spec, const ASPKDConfig& cfg,
                       const AttackHooks& hooks) {
  const auto run_start = Clock::now();
  cfg.validate();
  const int C = oracle.num_classes();
  if (pool.num_classes != C) throw std::invalid_argument("run_aspkd: pool and oracle disagree on class count");
  if (student_spec.num_classes != C || student_spec.input_dim != oracle.input_dim())
    throw std::invalid_argument("run_aspkd: student spec does not match oracle dimensions");
  if (cfg.label_mode != oracle.label_mode()) throw std::invalid_argument("run_aspkd: label mode differs from the oracle's");

  const std::int64_t n = cfg.budget(C);
  const std::int64_t s = cfg.effective_calls_per_round(C);
  if (static_cast<std::int64_t>(pool.num_active()) < n)
    throw std::invalid_argument("run_aspkd: pool has " + std::to_string(pool.num_active()) + " active samples, need " +
                                std::to_string(n));
  if (oracle.budget_status().remaining() < n) throw std::invalid_argument("run_aspkd: oracle budget below n");

  auto notify = [&](int round, Phase phase) {
    if (hooks.on_phase) hooks.on_phase(round, phase);
  };

  Random rng(cfg.seed);
  Network student = xavier_init<double>(student_spec, rng);

  const SamplerConfig sampler{cfg.sigma, cfg.rbf_distance, cfg.centroid};
  const PseudoLabelConfig labeler{cfg.k, cfg.effective_metric(), cfg.label_mode, cfg.weighting};

  LabeledProxySet labeled;
  RunReport report;
  report.config = cfg;
  report.student_spec = student_spec;
  report.budget = n;

  std::int64_t calls = 0;
  for (int round = 0; static_cast<std::int64_t>(labeled.size()) < n; ++round) {
    RoundRecord rec;
    rec.round = round;
    const auto want = static_cast<std::size_t>(std::min<std::int64_t>(s, n - static_cast<std::int64_t>(labeled.size())));

    auto t = Clock::now();
    std::vector<std::size_t> picked;
    if (uses_active_selection(cfg.mode)) {
      notify(round, Phase::select_active);
      picked = select_batch(pool, student, sampler, want, rng);
    } else {
      notify(round, Phase::select_uniform);
      picked = sample_without_replacement(pool.active_indices(), want, rng);
    }
    rec.times.select_ms = ms_since(t);

    t = Clock::now();
    notify(round, Phase::query);
    for (std::size_t i : picked) {
      const Eigen::VectorXd x = pool.features.row(static_cast<Eigen::Index>(i)).transpose();
      const auto response = oracle.query(x);
      ++calls;
      labeled.add(x.transpose(), response.as_distribution(C).transpose(), i);
      pool.promote(i);
    }
    rec.times.query_ms = ms_since(t);

    // Early stopping only holds out already-paid-for labels, and only once
    // there are at least two per class on average.
    SplitIndices split;
    rec.early_stopping = static_cast<std::int64_t>(labeled.size()) >= 2LL * C && cfg.validation_fraction > 0;
    if (rec.early_stopping) {
      split = stratified_split(labeled.hard_labels(), C, cfg.validation_fraction, rng);
      if (split.val.empty()) rec.early_stopping = false;
    }
    if (!rec.early_stopping) {
      split.train.resize(labeled.size());
      for (std::size_t i = 0; i < labeled.size(); ++i) split.train[i] = i;
      split.val.clear();
    }
    const Eigen::MatrixXd train_x = gather_rows(labeled.samples, split.train);
    const Eigen::MatrixXd train_y = gather_rows(labeled.targets, split.train);
    const Eigen::MatrixXd val_x = gather_rows(labeled.samples, split.val);
    const Eigen::MatrixXd val_y = gather_rows(labeled.targets, split.val);
    const Eigen::MatrixXd* vx = rec.early_stopping ? &val_x : nullptr;
    const Eigen::MatrixXd* vy = rec.early_stopping ? &val_y : nullptr;

    t = Clock::now();
    notify(round, Phase::supervised);
    auto supervised = train_until_convergence(std::move(student), train_x, train_y, vx, vy, cfg.train, rng);
    student = std::move(supervised.network);
    rec.supervised_epochs = static_cast<int>(supervised.history.size());
    rec.times.supervised_ms = ms_since(t);

    if (uses_pseudo_labels(cfg.mode) && pool.num_active() > 0) {
      t = Clock::now();
      notify(round, Phase::pseudo_label);
      pseudo_label_pool(pool, labeled, student, labeler);
      rec.times.pseudo_label_ms = ms_since(t);
      if (hooks.after_pseudo_label) rec.pseudo_label_accuracy = hooks.after_pseudo_label(round, pool);

      t = Clock::now();
      notify(round, Phase::joint);
      const auto rest = pool.active_indices();
      const Eigen::MatrixXd joint_x = stack(train_x, gather_rows(pool.features, rest));
      const Eigen::MatrixXd joint_y = stack(train_y, gather_rows(pool.pseudo_labels, rest));
      auto joint = train_until_convergence(std::move(student), joint_x, joint_y, vx, vy, cfg.train, rng);
      student = std::move(joint.network);
      rec.joint_epochs = static_cast<int>(joint.history.size());
      rec.times.joint_ms = ms_since(t);
    }

    rec.calls_used = calls;
    rec.labeled_size = labeled.size();
    rec.pool_hash = pool_hash(pool);
    spdlog::debug("round {}: |X'|={} calls={} supervised_epochs={} joint_epochs={}", round, rec.labeled_size, calls,
                  rec.supervised_epochs, rec.joint_epochs);
    if (rec.pseudo_label_accuracy) report.pseudo_label_accuracy = rec.pseudo_label_accuracy;
    report.rounds.push_back(rec);
  }

  report.calls_used = calls;
  report.student_checkpoint = checkpoint_to_string(student);
  report.wall_ms = ms_since(run_start);
  return {std::move(student), std::move(report), std::move(pool), std::move(labeled)};
}

std::string report_to_json(const RunReport& r) {
  using nlohmann::json;
  json doc;
  doc["version"] = "v1";
  const auto& c = r.config;
  doc["config"] = {{"per_class_budget", c.per_class_budget},
                   {"calls_per_round", c.effective_calls_per_round(r.student_spec.num_classes)},
                   {"k", c.k},
                   {"sigma", c.sigma},
                   {"metric", to_string(c.effective_metric())},
                   {"label_mode", to_string(c.label_mode)},
                   {"mode", to_string(c.mode)},
                   {"validation_fraction", c.validation_fraction},
                   {"seed", c.seed},
                   {"train",
                    {{"learning_rate", c.train.learning_rate},
                     {"batch_size", c.train.batch_size},
                     {"max_epochs", c.train.max_epochs},
                     {"patience", c.train.patience},
                     {"lr_step_size", c.train.lr_step_size},
                     {"lr_gamma", c.train.lr_gamma}}}};
  doc["budget"] = r.budget;
  doc["calls_used"] = r.calls_used;
  json rounds = json::array();
  for (const auto& rec : r.rounds) {
    json jr = {{"round", rec.round},
               {"calls_used", rec.calls_used},
               {"labeled_size", rec.labeled_size},
               {"early_stopping", rec.early_stopping},
               {"supervised_epochs", rec.supervised_epochs},
               {"joint_epochs", rec.joint_epochs},
               {"pool_hash", rec.pool_hash},
               {"wall_ms",
                {{"select", rec.times.select_ms},
                 {"query", rec.times.query_ms},
                 {"supervised", rec.times.supervised_ms},
                 {"pseudo_label", rec.times.pseudo_label_ms},
                 {"joint", rec.times.joint_ms}}}};
    jr["pseudo_label_accuracy"] = rec.pseudo_label_accuracy ? json(*rec.pseudo_label_accuracy) : json(nullptr);
    rounds.push_back(std::move(jr));
  }
  doc["rounds"] = std::move(rounds);
  doc["agreement_accuracy"] = r.agreement_accuracy ? json(*r.agreement_accuracy) : json(nullptr);
  doc["pseudo_label_accuracy"] = r.pseudo_label_accuracy ? json(*r.pseudo_label_accuracy) : json(nullptr);
  doc["wall_ms"] = r.wall_ms;
  doc["student"] = json::parse(r.student_checkpoint);
  return doc.dump(2);
}

}  // namespace extraction_lab
