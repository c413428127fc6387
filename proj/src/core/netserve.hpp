#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "core/oracles.hpp"

namespace httplib {
class Server;
class Client;
}  // namespace httplib

namespace mtd::netserve {

using featurespace::FeatureVector;
using oracles::Oracle;
using oracles::QueryTarget;

class ConnectionError : public Error {
 public:
  using Error::Error;
};

using oracles::BudgetExceeded;

struct ServePolicy {
  std::optional<std::uint64_t> max_queries_per_client;
  bool idle_tick = false;
};

// Clients are keyed by the X-Client-Id header, falling back to the remote address.
class OracleServer {
 public:
  OracleServer(Oracle oracle, ServePolicy policy = {});
  ~OracleServer();
  OracleServer(const OracleServer&) = delete;
  OracleServer& operator=(const OracleServer&) = delete;

  // Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  void start();  // serves on a background thread
  void wait();   // blocks until stopped
  void stop();
  int port() const { return port_; }

  // Runs `fn` under the oracle lock.
  void with_oracle(const std::function<void(Oracle&)>& fn);

 private:
  void install_routes();

  Oracle oracle_;
  ServePolicy policy_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::mutex mu_;
  std::map<std::string, std::uint64_t> per_client_;
  std::chrono::steady_clock::time_point last_query_;
  int port_ = -1;
  bool stopped_ = false;
};

// Parses "http://host:port", "host:port".
struct Endpoint {
  std::string host;
  int port = 0;

  static Endpoint parse(const std::string& s);
};

class RemoteOracle : public QueryTarget {
 public:
  explicit RemoteOracle(const Endpoint& endpoint, std::string client_id = {});
  ~RemoteOracle() override;

  Label query(const FeatureVector& x) override;
  std::uint64_t query_count() const override { return queries_; }

  // Server-side total from the health endpoint.
  std::uint64_t server_queries();

 private:
  std::unique_ptr<httplib::Client> client_;
  std::string client_id_;
  std::uint64_t queries_ = 0;
};

}  // namespace mtd::netserve
