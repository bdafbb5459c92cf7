#include "extraction_lab/oracle.hpp"

namespace extraction_lab {

std::string to_string(LabelMode mode) { return mode == LabelMode::soft ? "soft" : "hard"; }

LabelMode label_mode_from_string(const std::string& name) {
  if (name == "soft") return LabelMode::soft;
  if (name == "hard") return LabelMode::hard;
  throw std::invalid_argument("unknown label mode '" + name + "'");
}

int OracleResponse::predicted_class() const { return kind == LabelMode::hard ? label : argmax(probs); }

Eigen::VectorXd OracleResponse::as_distribution(int num_classes) const {
  if (kind == LabelMode::soft) return probs;
  return one_hot<double>(label, num_classes);
}

Budget::Budget(std::int64_t limit) : limit_(limit) {
  if (limit < 1) throw std::invalid_argument("Budget: limit must be >= 1");
}

bool Budget::try_acquire() {
  std::int64_t cur = used_.load();
  while (cur < limit_) {
    if (used_.compare_exchange_weak(cur, cur + 1)) return true;
  }
  return false;
}

BudgetStatus Budget::status() const { return {used_.load(), limit_}; }

OracleResponse teacher_response(const Network& teacher, const Eigen::VectorXd& sample, LabelMode mode) {
  const auto fr = forward(teacher, sample);
  if (mode == LabelMode::hard) return OracleResponse::hard(argmax(fr.logits));
  return OracleResponse::soft(softmax(fr.logits));
}

LocalOracle::LocalOracle(Network teacher, LabelMode mode, std::int64_t budget_limit)
    : teacher_(std::move(teacher)), mode_(mode), budget_(budget_limit) {}

OracleResponse LocalOracle::query(const Eigen::VectorXd& sample) {
  if (sample.size() != teacher_.spec.input_dim)
    throw DimensionMismatch("oracle query", teacher_.spec.input_dim, static_cast<int>(sample.size()));
  if (!budget_.try_acquire()) {
    const auto s = budget_.status();
    throw BudgetExhausted(s.used, s.limit);
  }
  return teacher_response(teacher_, sample, mode_);
}

std::vector<OracleResponse> unbudgeted_reference_labels(const Oracle& oracle, const Eigen::MatrixXd& samples) {
  const auto* local = dynamic_cast<const LocalOracle*>(&oracle);
  if (local == nullptr) throw DiagnosticsUnavailable("reference labels need an in-process teacher");
  std::vector<OracleResponse> out;
  out.reserve(static_cast<std::size_t>(samples.rows()));
  for (Eigen::Index i = 0; i < samples.rows(); ++i)
    out.push_back(teacher_response(local->teacher_, samples.row(i).transpose(), local->mode_));
  return out;
}

OracleResponse CountingOracle::query(const Eigen::VectorXd& sample) {
  try {
    auto r = inner_.query(sample);
    ++successes_;
    queried_.push_back(sample);
    return r;
  } catch (const BudgetExhausted&) {
    ++refusals_;
    throw;
  }
}

}  // namespace extraction_lab
