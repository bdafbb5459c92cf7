#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace extraction_lab {

class DimensionMismatch : public std::invalid_argument {
 public:
  DimensionMismatch(const std::string& where, int expected, int actual)
      : std::invalid_argument(where + ": dimension mismatch (expected " + std::to_string(expected) + ", got " +
                              std::to_string(actual) + ")"),
        expected_(expected),
        actual_(actual) {}
  int expected() const { return expected_; }
  int actual() const { return actual_; }

 private:
  int expected_;
  int actual_;
};

class BudgetExhausted : public std::runtime_error {
 public:
  BudgetExhausted(std::int64_t used, std::int64_t limit)
      : std::runtime_error("oracle budget exhausted (" + std::to_string(used) + "/" + std::to_string(limit) + ")"),
        used_(used),
        limit_(limit) {}
  std::int64_t used() const { return used_; }
  std::int64_t limit() const { return limit_; }

 private:
  std::int64_t used_;
  std::int64_t limit_;
};

// Network-level failure talking to a remote oracle.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Remote oracle answered with something outside the wire protocol.
class ProtocolViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DiagnosticsUnavailable : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace extraction_lab
