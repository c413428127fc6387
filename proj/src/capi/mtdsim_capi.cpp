#include "mtdsim/mtdsim.h"

#include <cstdlib>
#include <cstring>
#include <memory>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "core/bench.hpp"
#include "core/experiment.hpp"
#include "core/netserve.hpp"
#include "core/recon.hpp"

using nlohmann::json;
using namespace mtd;

struct mtd_session {
  experiment::Workspace ws;
  std::unique_ptr<oracles::Oracle> oracle;
};

struct mtd_server {
  std::unique_ptr<netserve::OracleServer> server;
};

namespace {

thread_local std::string g_last_error;

mtd_status fail(mtd_status code, const std::string& msg) {
  g_last_error = msg;
  return code;
}

template <typename F>
mtd_status guard(F&& f) {
  try {
    f();
    g_last_error.clear();
    return MTD_OK;
  } catch (const strategies::DegenerateDataset& e) {
    return fail(MTD_E_DEGENERATE, e.what());
  } catch (const oracles::BudgetExceeded& e) {
    return fail(MTD_E_BUDGET, e.what());
  } catch (const netserve::ConnectionError& e) {
    return fail(MTD_E_CONNECTION, e.what());
  } catch (const InvalidArgument& e) {
    return fail(MTD_E_ARGUMENT, e.what());
  } catch (const ParseError& e) {
    return fail(MTD_E_PARSE, e.what());
  } catch (const IoError& e) {
    return fail(MTD_E_IO, e.what());
  } catch (const json::exception& e) {
    return fail(MTD_E_PARSE, e.what());
  } catch (const std::exception& e) {
    return fail(MTD_E_RUNTIME, e.what());
  } catch (...) {
    return fail(MTD_E_RUNTIME, "unknown error");
  }
}

char* dup(const std::string& s) {
  char* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (!p) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void require(const void* p, const char* what) {
  if (!p) throw InvalidArgument(std::string(what) + " must not be NULL");
}

json parse_or_empty(const char* text) {
  if (!text || !*text) return json::object();
  return json::parse(text);
}

experiment::CellParams cell_from(const json& j) {
  experiment::CellParams c;
  if (j.contains("delta_budget") && !j.at("delta_budget").is_null()) {
    c.delta_budget = j.at("delta_budget").get<std::size_t>();
  }
  c.n_max = j.value("n_max", c.n_max);
  c.theta_t = j.value("theta_t", c.theta_t);
  c.train_fraction = j.value("train_fraction", c.train_fraction);
  if (j.contains("q") && !j.at("q").is_null()) c.q = j.at("q").get<double>();
  if (c.n_max == 0) throw InvalidArgument("n_max must be a positive integer");
  if (!(c.theta_t >= 0.0 && c.theta_t <= 1.0)) throw InvalidArgument("theta_t must lie in [0,1]");
  if (!(c.train_fraction > 0.0 && c.train_fraction <= 1.0)) throw InvalidArgument("train_fraction must lie in (0,1]");
  if (c.delta_budget == 0) throw InvalidArgument("delta_budget must be positive");
  if (c.q) bench::traffic_composition(*c.q, 1000);
  return c;
}

// Session oracle, or a remote client when an endpoint is given.
struct Target {
  std::optional<netserve::RemoteOracle> remote;
  oracles::QueryTarget* target = nullptr;

  Target(mtd_session* s, const char* endpoint) {
    if (endpoint && *endpoint) {
      remote.emplace(netserve::Endpoint::parse(endpoint));
      target = &*remote;
    } else {
      target = s->oracle.get();
    }
  }
};

}  // namespace

extern "C" {

const char* mtd_version(void) { return "0.1.0"; }

const char* mtd_last_error(void) { return g_last_error.c_str(); }

void mtd_string_free(char* s) { std::free(s); }

mtd_status mtd_dataset_generate(const char* synth_json, const char* csv_path, const char* catalog_path,
                                uint64_t* fingerprint_out) {
  return guard([&] {
    require(csv_path, "csv_path");
    require(catalog_path, "catalog_path");
    auto spec = featurespace::SynthSpec::from_json(parse_or_empty(synth_json));
    auto data = featurespace::synth_generate(spec);
    featurespace::save_dataset(csv_path, catalog_path, data.samples, data.catalog);
    if (fingerprint_out) *fingerprint_out = featurespace::fingerprint(data.samples);
  });
}

mtd_status mtd_dataset_fingerprint(const char* csv_path, const char* catalog_path, uint64_t* fingerprint_out) {
  return guard([&] {
    require(csv_path, "csv_path");
    require(catalog_path, "catalog_path");
    require(fingerprint_out, "fingerprint_out");
    *fingerprint_out = featurespace::fingerprint(featurespace::load_dataset(csv_path, catalog_path).samples);
  });
}

mtd_status mtd_session_train(const char* csv_path, const char* catalog_path, const char* oracle_json,
                             uint64_t split_seed, mtd_session** out) {
  return guard([&] {
    require(csv_path, "csv_path");
    require(catalog_path, "catalog_path");
    require(out, "out");
    auto config = oracles::OracleConfig::from_json(parse_or_empty(oracle_json));
    auto data = featurespace::load_dataset(csv_path, catalog_path);
    auto s = std::make_unique<mtd_session>();
    s->ws = experiment::build_workspace(data.samples, data.catalog, config, split_seed);
    s->oracle = std::make_unique<oracles::Oracle>(oracles::Oracle::restore(s->ws.oracle));
    *out = s.release();
  });
}

mtd_status mtd_session_load(const char* path, mtd_session** out) {
  return guard([&] {
    require(path, "path");
    require(out, "out");
    auto s = std::make_unique<mtd_session>();
    s->ws = experiment::Workspace::load(path);
    s->oracle = std::make_unique<oracles::Oracle>(oracles::Oracle::restore(s->ws.oracle));
    *out = s.release();
  });
}

mtd_status mtd_session_save(const mtd_session* s, const char* path) {
  return guard([&] {
    require(s, "session");
    require(path, "path");
    auto ws = s->ws;
    ws.oracle = s->oracle->snapshot();
    ws.save(path);
  });
}

void mtd_session_free(mtd_session* s) { delete s; }

mtd_status mtd_session_describe(const mtd_session* s, char** json_out) {
  return guard([&] {
    require(s, "session");
    require(json_out, "json_out");
    const auto& sp = s->ws.splits;
    json j{{"features", s->ws.catalog.size()},
           {"split_seed", sp.seed},
           {"splits",
            {{"train", sp.train.size()},
             {"validation", sp.validation.size()},
             {"attack_train", sp.attack_train.size()},
             {"attack_validation", sp.attack_validation.size()},
             {"attack_final", sp.attack_final.size()}}},
           {"oracle", s->oracle->config().to_json()},
           {"query_count", s->oracle->query_count()}};
    if (const auto& st = s->oracle->strategy()) j["strategy"] = st->probs;
    *json_out = dup(j.dump());
  });
}

size_t mtd_session_feature_count(const mtd_session* s) { return s ? s->ws.catalog.size() : 0; }

uint64_t mtd_session_query_count(const mtd_session* s) { return s ? s->oracle->query_count() : 0; }

mtd_status mtd_session_query(mtd_session* s, const uint32_t* indices, size_t n, int* label_out) {
  return guard([&] {
    require(s, "session");
    require(label_out, "label_out");
    if (n > 0) require(indices, "indices");
    const std::size_t m = s->ws.catalog.size();
    for (size_t i = 0; i < n; ++i) {
      if (indices[i] >= m) throw InvalidArgument("feature index out of range");
      if (i > 0 && indices[i] <= indices[i - 1]) throw InvalidArgument("feature indices must be strictly ascending");
    }
    auto x = featurespace::FeatureVector::from_indices(m, std::span<const std::uint32_t>(indices, n));
    *label_out = to_int(s->oracle->query(x));
  });
}

mtd_status mtd_session_attack(mtd_session* s, const char* request_json, const char* remote, char** outcomes_jsonl,
                              char** summary_json) {
  return guard([&] {
    require(s, "session");
    const json req = parse_or_empty(request_json);
    const auto attack = experiment::AttackSpec::from_json(req);
    const auto cell = cell_from(req);
    const std::uint64_t seed = req.value("seed", std::uint64_t{0});

    auto before = s->ws;
    before.oracle = s->oracle->snapshot();
    Target t(s, remote);
    auto result = experiment::run_campaign(s->ws, *t.target, attack, cell, seed);

    if (outcomes_jsonl) {
      std::ostringstream out;
      for (const auto& o : result.outcomes) out << o.to_json().dump() << '\n';
      *outcomes_jsonl = dup(out.str());
    }
    if (summary_json) {
      auto rep = experiment::summarize(before, result, attack, cell, seed);
      rep.cell = cell.label();
      json j = rep.to_json();
      if (!result.uaps.empty()) {
        json u = json::array();
        for (const auto& uap : result.uaps) u.push_back(uap.to_json());
        j["uaps"] = u;
      }
      *summary_json = dup(j.dump());
    }
  });
}

mtd_status mtd_session_fingerprint(mtd_session* s, const char* request_json, const char* remote, char** json_out) {
  return guard([&] {
    require(s, "session");
    require(json_out, "json_out");
    const json req = parse_or_empty(request_json);
    const std::string mode = req.value("mode", std::string("nature"));
    const auto& pool = s->ws.splits.attack_final;
    if (pool.empty()) throw InvalidArgument("session has no attack_final samples to probe with");
    Target t(s, remote);
    if (mode == "nature") {
      const std::size_t count = std::min<std::size_t>(req.value("samples", std::size_t{10}), pool.size());
      std::vector<featurespace::FeatureVector> probes;
      for (std::size_t i = 0; i < count; ++i) probes.push_back(pool[i].features);
      *json_out = dup(recon::probe_predictive_nature(*t.target, probes, req.value("n", std::size_t{100})).to_json().dump());
    } else if (mode == "budget") {
      const std::size_t idx = req.value("sample", std::size_t{0});
      if (idx >= pool.size()) throw InvalidArgument("sample index out of range");
      auto r = recon::estimate_query_budget(*t.target, pool[idx].features, req.value("n_large", std::size_t{1000}),
                                            req.value("resolution", std::size_t{100}));
      *json_out = dup(r.to_json().dump());
    } else {
      throw InvalidArgument("fingerprint mode must be 'nature' or 'budget'");
    }
  });
}

mtd_status mtd_sweep(const char* spec_json, size_t jobs, char** reports_jsonl) {
  return guard([&] {
    require(spec_json, "spec_json");
    require(reports_jsonl, "reports_jsonl");
    auto spec = experiment::ExperimentSpec::from_json(json::parse(spec_json));
    auto reports = experiment::run_experiment(spec, jobs == 0 ? 1 : jobs);
    std::ostringstream out;
    bench::emit_report(out, reports, bench::ReportFormat::kJsonl);
    *reports_jsonl = dup(out.str());
  });
}

mtd_status mtd_report_convert(const char* in_path, const char* in_format, const char* out_path,
                              const char* out_format) {
  return guard([&] {
    require(in_path, "in_path");
    require(out_path, "out_path");
    require(in_format, "in_format");
    require(out_format, "out_format");
    auto reports = bench::load_report(in_path, bench::report_format_from_name(in_format));
    bench::emit_report(out_path, reports, bench::report_format_from_name(out_format));
  });
}

mtd_status mtd_server_start(const mtd_session* s, const char* host, int port, const char* policy_json,
                            mtd_server** out) {
  return guard([&] {
    require(s, "session");
    require(out, "out");
    const json p = parse_or_empty(policy_json);
    netserve::ServePolicy policy;
    if (p.contains("max_queries_per_client") && !p.at("max_queries_per_client").is_null()) {
      policy.max_queries_per_client = p.at("max_queries_per_client").get<std::uint64_t>();
    }
    policy.idle_tick = p.value("idle_tick", false);
    auto srv = std::make_unique<mtd_server>();
    srv->server = std::make_unique<netserve::OracleServer>(oracles::Oracle::restore(s->oracle->snapshot()), policy);
    srv->server->bind(host ? host : "127.0.0.1", port);
    srv->server->start();
    *out = srv.release();
  });
}

int mtd_server_port(const mtd_server* srv) { return srv ? srv->server->port() : -1; }

void mtd_server_wait(mtd_server* srv) {
  if (srv) srv->server->wait();
}

void mtd_server_stop(mtd_server* srv) {
  if (srv) srv->server->stop();
}

void mtd_server_free(mtd_server* srv) { delete srv; }

}  // extern "C"
