#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtdsim/mtdsim.h"

using nlohmann::json;

namespace {

// Exit codes: 0 ok, 1 usage/argument error, 2 runtime error.
struct Failure {
  int code;
  std::string message;
};

void check(mtd_status st) {
  if (st == MTD_OK) return;
  const int code = st == MTD_E_ARGUMENT ? 1 : 2;
  throw Failure{code, mtd_last_error()};
}

struct Str {
  char* p = nullptr;
  ~Str() { mtd_string_free(p); }
  std::string get() const { return p ? p : ""; }
};

struct Session {
  mtd_session* s = nullptr;
  ~Session() { mtd_session_free(s); }
};

// Relative output names land in $MTDSIM_OUT_DIR when it is set.
std::string out_path(const std::string& p) {
  const char* dir = std::getenv("MTDSIM_OUT_DIR");
  if (!dir || !*dir || p.empty() || std::filesystem::path(p).is_absolute()) return p;
  std::filesystem::create_directories(dir);
  return (std::filesystem::path(dir) / p).string();
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Failure{2, "cannot open '" + path + "' for writing"};
  out << text;
  if (!out) throw Failure{2, "write to '" + path + "' failed"};
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Failure{2, "cannot open '" + path + "'"};
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Failure{1, "'" + path + "': " + e.what()};
  }
}

void echo(const std::string& cmd, const json& config) {
  std::cerr << "mtdsim " << cmd << " " << config.dump() << "\n";
}

std::string default_catalog(const std::string& csv) {
  auto p = std::filesystem::path(csv);
  return p.replace_extension(".catalog.json").string();
}

Session open_session(const std::string& path) {
  Session s;
  check(mtd_session_load(path.c_str(), &s.s));
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Moving-target defense simulator: data, oracles, attacks, fingerprinting, sweeps"};
  app.require_subcommand(1);
  app.set_version_flag("--version", mtd_version());

  std::uint64_t seed = 0;
  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", seed, "Random seed")->capture_default_str(); };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset and feature catalog");
  std::size_t g_m = 100, g_n = 1000;
  double g_delta = 0.6;
  std::string g_layout = "round-robin", g_out = "data.csv", g_catalog;
  gen->add_option("--m", g_m, "Number of features")->capture_default_str();
  gen->add_option("--n", g_n, "Samples per class")->capture_default_str();
  gen->add_option("--delta", g_delta, "Class separation in [0,1)")->capture_default_str();
  gen->add_option("--layout", g_layout, "Family layout: round-robin, addition-only, generic")->capture_default_str();
  gen->add_option("--out", g_out, "Dataset CSV")->capture_default_str();
  gen->add_option("--catalog", g_catalog, "Catalog JSON (default: <out>.catalog.json)");
  std::uint64_t g_seed = 7;
  gen->add_option("--seed", g_seed, "Random seed")->capture_default_str();

  // train
  auto* train = app.add_subcommand("train", "Train an oracle and write a snapshot");
  std::string t_data, t_catalog, t_config, t_kind, t_out = "oracle.bin";
  std::uint64_t t_split_seed = 1;
  train->add_option("--data", t_data, "Dataset CSV")->required();
  train->add_option("--catalog", t_catalog, "Catalog JSON (default: <data>.catalog.json)");
  train->add_option("--config", t_config, "Oracle config JSON file; flags override its values");
  train->add_option("--kind", t_kind, "deepmtd, morphence, mtdeep, stratdef, vote_majority, vote_veto, single");
  train->add_option("--split-seed", t_split_seed, "Dataset split seed")->capture_default_str();
  train->add_option("--out", t_out, "Snapshot path (.bin = CBOR)")->capture_default_str();
  add_seed(train);

  // serve
  auto* serve = app.add_subcommand("serve", "Serve an oracle snapshot over HTTP");
  std::string s_oracle, s_host = "127.0.0.1";
  int s_port = 8080;
  std::optional<std::uint64_t> s_budget;
  bool s_idle = false;
  serve->add_option("--oracle", s_oracle, "Oracle snapshot")->required();
  serve->add_option("--host", s_host, "Bind address")->capture_default_str();
  serve->add_option("--port", s_port, "Port (0 = any free port)")->capture_default_str();
  serve->add_option("--max-queries", s_budget, "Per-client query budget");
  serve->add_flag("--idle-tick", s_idle, "Feed measured idle time to the oracle");
  add_seed(serve);

  // attack
  auto* attack = app.add_subcommand("attack", "Run an attack campaign");
  attack->require_subcommand(1);
  std::string a_oracle, a_remote, a_mode = "graybox", a_out, a_summary, a_methods;
  std::uint64_t a_n_max = 500;
  double a_theta = 0.75, a_fraction = 1.0;
  std::optional<std::size_t> a_delta;
  std::optional<double> a_q;
  std::size_t a_samples = 0, a_rer = 100;
  for (const char* name : {"transfer", "query", "uap"}) {
    auto* c = attack->add_subcommand(name, std::string("Run the ") + name + " attack");
    c->add_option("--oracle", a_oracle, "Oracle snapshot")->required();
    c->add_option("--remote", a_remote, "Attack a served oracle at host:port instead of the local one");
    c->add_option("--mode", a_mode, "blackbox or graybox")->capture_default_str();
    c->add_option("--n-max", a_n_max, "Query cap per sample")->capture_default_str();
    c->add_option("--theta-t", a_theta, "Fraction of substitutes a candidate must evade")->capture_default_str();
    c->add_option("--delta-budget", a_delta, "Max oracle relations for black-box substitutes");
    c->add_option("--train-fraction", a_fraction, "Fraction of attacker training data used")->capture_default_str();
    c->add_option("--methods", a_methods, "Comma-separated craft methods (fgsm,bim,jsma,dt_attack,svm_attack)");
    c->add_option("--samples", a_samples, "Malware targets (0 = all)")->capture_default_str();
    c->add_option("--rer-attempts", a_rer, "Repeat-evasion attempts per evader")->capture_default_str();
    c->add_option("--q", a_q, "Mixed-traffic adversarial share for the summary metrics");
    c->add_option("--out", a_out, "Outcome JSONL (default: stdout)");
    c->add_option("--summary", a_summary, "Metrics summary JSON");
    add_seed(c);
  }

  // fingerprint
  auto* fp = app.add_subcommand("fingerprint", "Fingerprint an oracle");
  fp->require_subcommand(1);
  std::string f_oracle, f_remote, f_out;
  std::size_t f_n = 100, f_samples = 10, f_n_large = 1000, f_resolution = 100, f_sample = 0;
  auto* fp_nature = fp->add_subcommand("nature", "Static or dynamic predictions");
  auto* fp_budget = fp->add_subcommand("budget", "Estimate a hidden query budget");
  for (auto* c : {fp_nature, fp_budget}) {
    c->add_option("--oracle", f_oracle, "Oracle snapshot")->required();
    c->add_option("--remote", f_remote, "Probe a served oracle at host:port instead of the local one");
    c->add_option("--out", f_out, "Report JSON (default: stdout)");
    add_seed(c);
  }
  fp_nature->add_option("--n", f_n, "Queries per probe sample")->capture_default_str();
  fp_nature->add_option("--samples", f_samples, "Probe samples")->capture_default_str();
  fp_budget->add_option("--n-large", f_n_large, "Repeated queries")->capture_default_str();
  fp_budget->add_option("--resolution", f_resolution, "Bound rounding")->capture_default_str();
  fp_budget->add_option("--sample", f_sample, "Index of the probe sample")->capture_default_str();

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run a parameter sweep from a spec file");
  std::string w_spec, w_out, w_format = "jsonl";
  std::size_t w_jobs = 1;
  sweep->add_option("--spec", w_spec, "Experiment spec JSON")->required();
  sweep->add_option("--jobs", w_jobs, "Parallel grid cells")->capture_default_str();
  sweep->add_option("--out", w_out, "Report file (default: stdout)");
  sweep->add_option("--format", w_format, "jsonl or csv")->capture_default_str();
  auto* w_seed = sweep->add_option("--seed", seed, "Overrides the experiment seed");

  // report
  auto* report = app.add_subcommand("report", "Convert reports between JSONL and CSV");
  std::string r_in, r_out, r_in_format, r_out_format;
  report->add_option("--in", r_in, "Input report")->required();
  report->add_option("--out", r_out, "Output report")->required();
  report->add_option("--in-format", r_in_format, "jsonl or csv (default: by extension)");
  report->add_option("--out-format", r_out_format, "jsonl or csv (default: by extension)");
  add_seed(report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen->parsed()) {
      if (g_catalog.empty()) g_catalog = default_catalog(g_out);
      const std::string csv = out_path(g_out), cat = out_path(g_catalog);
      json spec{{"m", g_m}, {"n_per_class", g_n}, {"delta", g_delta}, {"layout", g_layout}, {"seed", g_seed}};
      echo("gen-data", {{"synth", spec}, {"out", csv}, {"catalog", cat}});
      std::uint64_t hash = 0;
      check(mtd_dataset_generate(spec.dump().c_str(), csv.c_str(), cat.c_str(), &hash));
      std::cout << json{{"csv", csv}, {"catalog", cat}, {"fingerprint", hash}}.dump() << "\n";
    } else if (train->parsed()) {
      if (t_catalog.empty()) t_catalog = default_catalog(t_data);
      json config = t_config.empty() ? json::object() : read_json_file(t_config);
      if (!t_kind.empty()) config["kind"] = t_kind;
      if (train->count("--seed") || !config.contains("seed")) config["seed"] = seed;
      const std::string out = out_path(t_out);
      echo("train", {{"data", t_data}, {"catalog", t_catalog}, {"split_seed", t_split_seed}, {"oracle", config},
                     {"out", out}});
      Session s;
      check(mtd_session_train(t_data.c_str(), t_catalog.c_str(), config.dump().c_str(), t_split_seed, &s.s));
      check(mtd_session_save(s.s, out.c_str()));
      Str desc;
      check(mtd_session_describe(s.s, &desc.p));
      std::cout << desc.get() << "\n";
    } else if (serve->parsed()) {
      json policy{{"idle_tick", s_idle}};
      policy["max_queries_per_client"] = s_budget ? json(*s_budget) : json(nullptr);
      echo("serve", {{"oracle", s_oracle}, {"host", s_host}, {"port", s_port}, {"policy", policy}, {"seed", seed}});
      auto s = open_session(s_oracle);
      mtd_server* srv = nullptr;
      check(mtd_server_start(s.s, s_host.c_str(), s_port, policy.dump().c_str(), &srv));
      std::cerr << "listening on " << s_host << ":" << mtd_server_port(srv) << "\n";
      mtd_server_wait(srv);
      mtd_server_free(srv);
    } else if (attack->parsed()) {
      const auto* sub = attack->get_subcommands().front();
      json req{{"type", sub->get_name()},
               {"threat", a_mode},
               {"n_max", a_n_max},
               {"theta_t", a_theta},
               {"train_fraction", a_fraction},
               {"samples", a_samples},
               {"rer_attempts", a_rer},
               {"seed", seed}};
      req["delta_budget"] = a_delta ? json(*a_delta) : json(nullptr);
      req["q"] = a_q ? json(*a_q) : json(nullptr);
      if (!a_methods.empty()) {
        json m = json::array();
        std::stringstream ss(a_methods);
        for (std::string tok; std::getline(ss, tok, ',');) {
          if (!tok.empty()) m.push_back(tok);
        }
        req["methods"] = m;
      }
      const std::string out = out_path(a_out), summary = out_path(a_summary);
      echo("attack " + sub->get_name(), {{"oracle", a_oracle}, {"remote", a_remote}, {"request", req}, {"out", out}});
      auto s = open_session(a_oracle);
      Str lines, sum;
      check(mtd_session_attack(s.s, req.dump().c_str(), a_remote.empty() ? nullptr : a_remote.c_str(), &lines.p,
                               summary.empty() ? nullptr : &sum.p));
      write_text(out, lines.get());
      if (!summary.empty()) write_text(summary, sum.get() + "\n");
    } else if (fp->parsed()) {
      const bool nature = fp_nature->parsed();
      json req = nature ? json{{"mode", "nature"}, {"n", f_n}, {"samples", f_samples}}
                        : json{{"mode", "budget"}, {"n_large", f_n_large}, {"resolution", f_resolution},
                               {"sample", f_sample}};
      echo(std::string("fingerprint ") + (nature ? "nature" : "budget"),
           {{"oracle", f_oracle}, {"remote", f_remote}, {"request", req}, {"seed", seed}});
      auto s = open_session(f_oracle);
      Str rep;
      check(mtd_session_fingerprint(s.s, req.dump().c_str(), f_remote.empty() ? nullptr : f_remote.c_str(), &rep.p));
      write_text(out_path(f_out), rep.get() + "\n");
    } else if (sweep->parsed()) {
      json spec = read_json_file(w_spec);
      if (w_seed->count()) spec["seed"] = seed;
      if (w_format != "jsonl" && w_format != "csv") throw Failure{1, "--format must be jsonl or csv"};
      const std::string out = out_path(w_out);
      echo("sweep", {{"spec", spec}, {"jobs", w_jobs}, {"out", out}, {"format", w_format}});
      Str lines;
      check(mtd_sweep(spec.dump().c_str(), w_jobs, &lines.p));
      if (w_format == "jsonl") {
        write_text(out, lines.get());
      } else {
        // Round-trip through a temporary JSONL file so the CSV writer stays in the library.
        auto tmp = std::filesystem::temp_directory_path() / ("mtdsim-sweep-" + std::to_string(::getpid()) + ".jsonl");
        write_text(tmp.string(), lines.get());
        const std::string target = out.empty() ? (tmp.string() + ".csv") : out;
        const auto st = mtd_report_convert(tmp.c_str(), "jsonl", target.c_str(), "csv");
        std::filesystem::remove(tmp);
        check(st);
        if (out.empty()) {
          std::ifstream in(target);
          std::cout << in.rdbuf();
          std::filesystem::remove(target);
        }
      }
    } else if (report->parsed()) {
      auto by_ext = [](const std::string& p) {
        return std::filesystem::path(p).extension() == ".csv" ? std::string("csv") : std::string("jsonl");
      };
      if (r_in_format.empty()) r_in_format = by_ext(r_in);
      if (r_out_format.empty()) r_out_format = by_ext(r_out);
      const std::string out = out_path(r_out);
      echo("report", {{"in", r_in}, {"in_format", r_in_format}, {"out", out}, {"out_format", r_out_format},
                      {"seed", seed}});
      check(mtd_report_convert(r_in.c_str(), r_in_format.c_str(), out.c_str(), r_out_format.c_str()));
    }
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
