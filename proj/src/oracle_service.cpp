#include "extraction_lab/oracle_service.hpp"

#include <sys/socket.h>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "extraction_lab/checkpoint.hpp"
#include "extraction_lab/data.hpp"

namespace extraction_lab {

using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";

void send_error(httplib::Response& res, int status, const std::string& code) {
  res.status = status;
  res.set_content(json{{"error", code}}.dump(), kJson);
}

std::string encode_response(const OracleResponse& r) {
  if (r.kind == LabelMode::hard) return json{{"kind", "hard"}, {"label", r.label}}.dump();
  std::string out = R"({"kind":"soft","probs":[)";
  for (Eigen::Index i = 0; i < r.probs.size(); ++i) {
    if (i) out += ',';
    out += format_double(r.probs(i));
  }
  out += "]}";
  return out;
}

json parse_body(const httplib::Result& res, const char* what) {
  try {
    return json::parse(res->body);
  } catch (const json::parse_error&) {
    throw ProtocolViolation(std::string(what) + ": response body is not a JSON document");
  }
}

constexpr std::size_t kWorkerThreads = 64;

}  // namespace

OracleService::OracleService(const ServiceConfig& cfg)
    : OracleService(load_checkpoint(cfg.checkpoint), cfg.label_mode, cfg.budget_limit, cfg.host, cfg.port) {}

OracleService::OracleService(Network teacher, LabelMode mode, std::int64_t budget_limit, std::string host, int port)
    : oracle_(std::move(teacher), mode, budget_limit),
      host_(std::move(host)),
      requested_port_(port),
      server_(std::make_unique<httplib::Server>()) {
  // Plain SO_REUSEADDR: the library default also sets SO_REUSEPORT, which
  // would let a second service silently share a port.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
  // Keep-alive connections pin a worker each; size for many concurrent clients.
  server_->new_task_queue = [] { return new httplib::ThreadPool(kWorkerThreads); };
  install_routes();
}

OracleService::~OracleService() { stop(); }

void OracleService::install_routes() {
  server_->Get("/v1/meta", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"label_mode", to_string(oracle_.label_mode())},
                         {"num_classes", oracle_.num_classes()},
                         {"input_dim", oracle_.input_dim()}}
                        .dump(),
                    kJson);
  });

  server_->Get("/v1/budget", [this](const httplib::Request&, httplib::Response& res) {
    const auto s = oracle_.budget_status();
    res.set_content(json{{"used", s.used}, {"limit", s.limit}}.dump(), kJson);
  });

  server_->Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
    Eigen::VectorXd x;
    try {
      const auto body = json::parse(req.body);
      const auto& features = body.at("features");
      if (!features.is_array()) return send_error(res, 400, "malformed_request");
      x.resize(static_cast<Eigen::Index>(features.size()));
      for (std::size_t i = 0; i < features.size(); ++i) {
        if (!features[i].is_number()) return send_error(res, 400, "malformed_request");
        x(static_cast<Eigen::Index>(i)) = features[i].get<double>();
      }
    } catch (const json::exception&) {
      return send_error(res, 400, "malformed_request");
    }
    if (!x.allFinite()) return send_error(res, 400, "malformed_request");

    try {
      const auto answer = oracle_.query(x);
      res.set_content(encode_response(answer), kJson);
    } catch (const DimensionMismatch&) {
      send_error(res, 400, "dimension_mismatch");
    } catch (const BudgetExhausted& e) {
      res.status = 429;
      res.set_content(json{{"error", "budget_exhausted"}, {"used", e.used()}, {"limit", e.limit()}}.dump(), kJson);
    }
  });
}

int OracleService::start() {
  if (thread_.joinable()) return port_;
  if (requested_port_ == 0) {
    port_ = server_->bind_to_any_port(host_);
    if (port_ < 0) throw std::runtime_error("oracle service: cannot bind " + host_);
  } else {
    if (!server_->bind_to_port(host_, requested_port_))
      throw std::runtime_error("oracle service: cannot bind " + host_ + ":" + std::to_string(requested_port_) +
                               " (port in use?)");
    port_ = requested_port_;
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  spdlog::info("oracle service listening on {}", base_url());
  return port_;
}

void OracleService::wait() {
  if (thread_.joinable()) thread_.join();
}

void OracleService::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string OracleService::base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }

RemoteOracle::RemoteOracle(const std::string& base_url, std::chrono::milliseconds timeout)
    : client_(std::make_unique<httplib::Client>(base_url)) {
  if (!client_->is_valid()) throw TransportError("remote oracle: invalid base url '" + base_url + "'");
  client_->set_connection_timeout(timeout);
  client_->set_read_timeout(timeout);
  client_->set_write_timeout(timeout);

  auto res = client_->Get("/v1/meta");
  if (!res) throw TransportError("remote oracle: GET /v1/meta failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw ProtocolViolation("remote oracle: /v1/meta returned status " + std::to_string(res->status));
  const auto meta = parse_body(res, "/v1/meta");
  try {
    mode_ = label_mode_from_string(meta.at("label_mode").get<std::string>());
    num_classes_ = meta.at("num_classes").get<int>();
    input_dim_ = meta.at("input_dim").get<int>();
  } catch (const std::exception& e) {
    throw ProtocolViolation(std::string("remote oracle: bad /v1/meta body: ") + e.what());
  }
  if (num_classes_ < 2 || input_dim_ < 1) throw ProtocolViolation("remote oracle: /v1/meta reports invalid dimensions");
}

RemoteOracle::~RemoteOracle() = default;

OracleResponse RemoteOracle::query(const Eigen::VectorXd& sample) {
  std::string body = R"({"features":[)";
  for (Eigen::Index i = 0; i < sample.size(); ++i) {
    if (i) body += ',';
    body += format_double(sample(i));
  }
  body += "]}";

  httplib::Result res;
  {
    std::lock_guard lock(mutex_);
    res = client_->Post("/v1/predict", body, kJson);
  }
  if (!res) throw TransportError("remote oracle: POST /v1/predict failed: " + httplib::to_string(res.error()));
  const auto doc = parse_body(res, "/v1/predict");

  try {
    if (res->status == 429) throw BudgetExhausted(doc.at("used").get<std::int64_t>(), doc.at("limit").get<std::int64_t>());
    if (res->status == 400) {
      const auto code = doc.at("error").get<std::string>();
      if (code == "dimension_mismatch") throw DimensionMismatch("remote oracle query", input_dim_, static_cast<int>(sample.size()));
      throw ProtocolViolation("remote oracle: request rejected: " + code);
    }
    if (res->status != 200) throw ProtocolViolation("remote oracle: unexpected status " + std::to_string(res->status));

    const auto kind = doc.at("kind").get<std::string>();
    if (kind == "hard") {
      if (mode_ != LabelMode::hard) throw ProtocolViolation("remote oracle: hard answer from a soft oracle");
      const int label = doc.at("label").get<int>();
      if (label < 0 || label >= num_classes_) throw ProtocolViolation("remote oracle: label out of range");
      return OracleResponse::hard(label);
    }
    if (kind == "soft") {
      if (mode_ != LabelMode::soft) throw ProtocolViolation("remote oracle: soft answer from a hard oracle");
      const auto probs = doc.at("probs").get<std::vector<double>>();
      if (static_cast<int>(probs.size()) != num_classes_) throw ProtocolViolation("remote oracle: wrong probability count");
      Eigen::VectorXd p = Eigen::Map<const Eigen::VectorXd>(probs.data(), static_cast<Eigen::Index>(probs.size()));
      if (!p.allFinite() || (p.array() < 0).any() || std::abs(p.sum() - 1.0) > 1e-6)
        throw ProtocolViolation("remote oracle: probabilities are not a distribution");
      return OracleResponse::soft(std::move(p));
    }
    throw ProtocolViolation("remote oracle: unknown response kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolViolation(std::string("remote oracle: malformed response: ") + e.what());
  }
}

BudgetStatus RemoteOracle::budget_status() const {
  httplib::Result res;
  {
    std::lock_guard lock(mutex_);
    res = client_->Get("/v1/budget");
  }
  if (!res) throw TransportError("remote oracle: GET /v1/budget failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw ProtocolViolation("remote oracle: /v1/budget returned status " + std::to_string(res->status));
  const auto doc = parse_body(res, "/v1/budget");
  try {
    return {doc.at("used").get<std::int64_t>(), doc.at("limit").get<std::int64_t>()};
  } catch (const nlohmann::json::exception& e) {
    throw ProtocolViolation(std::string("remote oracle: bad /v1/budget body: ") + e.what());
  }
}

}  // namespace extraction_lab
