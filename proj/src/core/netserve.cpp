#include "core/netserve.hpp"

#include <httplib.h>

#include <json.hpp>

namespace mtd::netserve {

using nlohmann::json;

namespace {

constexpr const char* kJson = "application/json";

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), kJson);
}

// Strictly ascending, in-range indices or nullopt with a reason.
std::optional<FeatureVector> parse_features(const std::string& body, std::size_t m, std::string& why) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception&) {
    why = "body is not JSON";
    return std::nullopt;
  }
  if (!j.is_object() || !j.contains("features") || !j.at("features").is_array()) {
    why = "expected {\"features\": [indices]}";
    return std::nullopt;
  }
  std::vector<std::uint32_t> idx;
  for (const auto& v : j.at("features")) {
    if (!v.is_number_unsigned()) {
      why = "feature indices must be nonnegative integers";
      return std::nullopt;
    }
    const auto i = v.get<std::uint64_t>();
    if (i >= m) {
      why = "feature index out of range";
      return std::nullopt;
    }
    if (!idx.empty() && i <= idx.back()) {
      why = "feature indices must be strictly ascending";
      return std::nullopt;
    }
    idx.push_back(static_cast<std::uint32_t>(i));
  }
  return FeatureVector::from_indices(m, idx);
}

}  // namespace

OracleServer::OracleServer(Oracle oracle, ServePolicy policy)
    : oracle_(std::move(oracle)),
      policy_(policy),
      server_(std::make_unique<httplib::Server>()),
      last_query_(std::chrono::steady_clock::now()) {
  // SO_REUSEADDR only: a second server on a taken port must fail to bind.
  server_->set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });
  server_->set_tcp_nodelay(true);
  server_->set_keep_alive_timeout(1);
  install_routes();
}

OracleServer::~OracleServer() { stop(); }

void OracleServer::install_routes() {
  server_->Post("/v1/predict", [this](const httplib::Request& req, httplib::Response& res) {
    std::string why;
    auto x = parse_features(req.body, oracle_.feature_count(), why);
    if (!x) return reply(res, 400, {{"error", why}});
    const std::string client = req.has_header("X-Client-Id") ? req.get_header_value("X-Client-Id") : req.remote_addr;
    std::lock_guard lock(mu_);
    auto& used = per_client_[client];
    if (policy_.max_queries_per_client && used >= *policy_.max_queries_per_client) {
      return reply(res, 429, {{"error", "budget"}});
    }
    const auto now = std::chrono::steady_clock::now();
    if (policy_.idle_tick) {
      oracle_.tick_idle(std::chrono::duration_cast<std::chrono::milliseconds>(now - last_query_).count());
    }
    last_query_ = now;
    ++used;
    reply(res, 200, {{"label", to_int(oracle_.query(*x))}});
  });
  server_->Get("/v1/health", [this](const httplib::Request&, httplib::Response& res) {
    std::lock_guard lock(mu_);
    reply(res, 200, {{"ok", true}, {"queries", oracle_.query_count()}});
  });
}

int OracleServer::bind(const std::string& host, int port) {
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port_;
}

void OracleServer::start() {
  if (port_ < 0) throw Error("server is not bound");
  if (thread_.joinable()) throw Error("server is already running");
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void OracleServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void OracleServer::stop() {
  if (!server_ || stopped_) return;
  stopped_ = true;
  // httplib only releases the listening socket of a running server.
  if (port_ >= 0 && !thread_.joinable()) start();
  server_->stop();
  wait();
}

void OracleServer::with_oracle(const std::function<void(Oracle&)>& fn) {
  std::lock_guard lock(mu_);
  fn(oracle_);
}

Endpoint Endpoint::parse(const std::string& s) {
  std::string rest = s;
  if (rest.rfind("http://", 0) == 0) rest = rest.substr(7);
  while (!rest.empty() && rest.back() == '/') rest.pop_back();
  const auto colon = rest.rfind(':');
  if (colon == std::string::npos || colon == 0) throw InvalidArgument("endpoint must be host:port, got '" + s + "'");
  Endpoint e;
  e.host = rest.substr(0, colon);
  try {
    std::size_t used = 0;
    e.port = std::stoi(rest.substr(colon + 1), &used);
    if (used != rest.size() - colon - 1) throw std::invalid_argument("trailing");
  } catch (const std::exception&) {
    throw InvalidArgument("bad port in endpoint '" + s + "'");
  }
  if (e.port <= 0 || e.port > 65535) throw InvalidArgument("port out of range in endpoint '" + s + "'");
  return e;
}

RemoteOracle::RemoteOracle(const Endpoint& endpoint, std::string client_id)
    : client_(std::make_unique<httplib::Client>(endpoint.host, endpoint.port)), client_id_(std::move(client_id)) {
  client_->set_keep_alive(true);
  client_->set_tcp_nodelay(true);
  client_->set_connection_timeout(2, 0);
}

RemoteOracle::~RemoteOracle() = default;

Label RemoteOracle::query(const FeatureVector& x) {
  httplib::Headers headers;
  if (!client_id_.empty()) headers.emplace("X-Client-Id", client_id_);
  const json body{{"features", x.set_indices()}};
  auto res = client_->Post("/v1/predict", headers, body.dump(), kJson);
  if (!res) throw ConnectionError("oracle endpoint unreachable: " + httplib::to_string(res.error()));
  if (res->status == 429) throw BudgetExceeded("oracle query budget exhausted");
  if (res->status != 200) throw Error("oracle endpoint returned HTTP " + std::to_string(res->status) + ": " + res->body);
  try {
    const auto j = json::parse(res->body);
    ++queries_;
    return label_from_int(j.at("label").get<int>());
  } catch (const json::exception& e) {
    throw Error(std::string("malformed oracle response: ") + e.what());
  }
}

std::uint64_t RemoteOracle::server_queries() {
  auto res = client_->Get("/v1/health");
  if (!res) throw ConnectionError("oracle endpoint unreachable: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error("health check returned HTTP " + std::to_string(res->status));
  return json::parse(res->body).at("queries").get<std::uint64_t>();
}

}  // namespace mtd::netserve
