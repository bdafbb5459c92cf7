#pragma once

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <string>
#include <vector>

#include "extraction_lab/errors.hpp"
#include "extraction_lab/nn.hpp"

namespace extraction_lab {

enum class LabelMode { soft, hard };

std::string to_string(LabelMode mode);
LabelMode label_mode_from_string(const std::string& name);

struct OracleResponse {
  LabelMode kind = LabelMode::soft;
  Eigen::VectorXd probs;  // soft only
  int label = -1;         // hard only

  static OracleResponse soft(Eigen::VectorXd p) { return {LabelMode::soft, std::move(p), -1}; }
  static OracleResponse hard(int l) { return {LabelMode::hard, {}, l}; }

  int predicted_class() const;
  // Soft distribution, or one-hot of the hard label.
  Eigen::VectorXd as_distribution(int num_classes) const;
};

struct BudgetStatus {
  std::int64_t used = 0;
  std::int64_t limit = 0;
  std::int64_t remaining() const { return limit - used; }
  bool operator==(const BudgetStatus&) const = default;
};

// Call cap n. try_acquire is a linearizable check-and-increment; a refused
// call leaves `used` unchanged.
class Budget {
 public:
  explicit Budget(std::int64_t limit);
  bool try_acquire();
  BudgetStatus status() const;

 private:
  std::int64_t limit_;
  std::atomic<std::int64_t> used_{0};
};

// The black-box boundary the attack sees: per-sample queries and the budget
// counter, nothing else.
class Oracle {
 public:
  virtual ~Oracle() = default;
  /// Throws BudgetExhausted or DimensionMismatch; each success costs one unit.
  virtual OracleResponse query(const Eigen::VectorXd& sample) = 0;
  virtual BudgetStatus budget_status() const = 0;
  virtual LabelMode label_mode() const = 0;
  virtual int num_classes() const = 0;
  virtual int input_dim() const = 0;
};

/// Teacher answer for a sample without any budget accounting.
OracleResponse teacher_response(const Network& teacher, const Eigen::VectorXd& sample, LabelMode mode);

class LocalOracle final : public Oracle {
 public:
  LocalOracle(Network teacher, LabelMode mode, std::int64_t budget_limit);

  OracleResponse query(const Eigen::VectorXd& sample) override;
  BudgetStatus budget_status() const override { return budget_.status(); }
  LabelMode label_mode() const override { return mode_; }
  int num_classes() const override { return teacher_.spec.num_classes; }
  int input_dim() const override { return teacher_.spec.input_dim; }

 private:
  friend std::vector<OracleResponse> unbudgeted_reference_labels(const Oracle&, const Eigen::MatrixXd&);
  Network teacher_;
  LabelMode mode_;
  Budget budget_;
};

/// Diagnostic-only teacher labels for each row of `samples`, computed without
/// touching the budget. Only in-process oracles support it; anything else
/// throws DiagnosticsUnavailable.
std::vector<OracleResponse> unbudgeted_reference_labels(const Oracle& oracle, const Eigen::MatrixXd& samples);

// Forwards to another oracle and counts successful and refused calls.
class CountingOracle final : public Oracle {
 public:
  explicit CountingOracle(Oracle& inner) : inner_(inner) {}

  OracleResponse query(const Eigen::VectorXd& sample) override;
  BudgetStatus budget_status() const override { return inner_.budget_status(); }
  LabelMode label_mode() const override { return inner_.label_mode(); }
  int num_classes() const override { return inner_.num_classes(); }
  int input_dim() const override { return inner_.input_dim(); }

  std::int64_t successes() const { return successes_; }
  std::int64_t refusals() const { return refusals_; }
  // Sample rows in call order.
  const std::vector<Eigen::VectorXd>& queried() const { return queried_; }

 private:
  Oracle& inner_;
  std::int64_t successes_ = 0;
  std::int64_t refusals_ = 0;
  std::vector<Eigen::VectorXd> queried_;
};

}  // namespace extraction_lab
