#pragma once

// HTTP/1.1 face of a teacher. Wire protocol:
//   GET  /v1/meta    -> {"label_mode":"soft"|"hard","num_classes":C,"input_dim":d}
//   GET  /v1/budget  -> {"used":u,"limit":n}
//   POST /v1/predict {"features":[...]}
//        200 {"kind":"soft","probs":[...]} | {"kind":"hard","label":i}
//        400 {"error":"dimension_mismatch"} | {"error":"malformed_request"}
//        429 {"error":"budget_exhausted","used":n,"limit":n}
// Probabilities are written with 17 significant digits.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>

#include "extraction_lab/oracle.hpp"

namespace httplib {
class Server;
class Client;
}  // namespace httplib

namespace extraction_lab {

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks a free port
  std::filesystem::path checkpoint;
  LabelMode label_mode = LabelMode::soft;
  std::int64_t budget_limit = 1;
};

class OracleService {
 public:
  /// Loads the checkpoint; throws CheckpointError.
  explicit OracleService(const ServiceConfig& cfg);
  OracleService(Network teacher, LabelMode mode, std::int64_t budget_limit, std::string host = "127.0.0.1", int port = 0);
  ~OracleService();
  OracleService(const OracleService&) = delete;
  OracleService& operator=(const OracleService&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  /// Throws std::runtime_error when the port cannot be bound.
  int start();
  /// Blocks until stop() is called from elsewhere.
  void wait();
  void stop();

  int port() const { return port_; }
  std::string base_url() const;
  BudgetStatus budget_status() const { return oracle_.budget_status(); }

 private:
  void install_routes();

  LocalOracle oracle_;
  std::string host_;
  int requested_port_;
  int port_ = -1;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
};

// Oracle contract over HTTP. Network failures raise TransportError, bodies
// outside the protocol raise ProtocolViolation, 429 maps to BudgetExhausted.
class RemoteOracle final : public Oracle {
 public:
  explicit RemoteOracle(const std::string& base_url, std::chrono::milliseconds timeout = std::chrono::seconds(10));
  ~RemoteOracle() override;

  OracleResponse query(const Eigen::VectorXd& sample) override;
  BudgetStatus budget_status() const override;
  LabelMode label_mode() const override { return mode_; }
  int num_classes() const override { return num_classes_; }
  int input_dim() const override { return input_dim_; }

 private:
  std::unique_ptr<httplib::Client> client_;
  mutable std::mutex mutex_;
  LabelMode mode_ = LabelMode::soft;
  int num_classes_ = 0;
  int input_dim_ = 0;
};

}  // namespace extraction_lab
