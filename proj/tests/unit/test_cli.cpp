#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workdir {
  fs::path path;
  Workdir() {
    path = fs::temp_directory_path() / ("mtdsim_cli_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~Workdir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }

  Run run(const std::string& args, const std::string& env = "") const {
    const auto out = path / "stdout.txt", err = path / "stderr.txt";
    const std::string cmd = "cd '" + path.string() + "' && " + env + " '" MTDSIM_CLI "' " + args + " >'" +
                            out.string() + "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    Run r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }
};

const Workdir& shared() {
  static Workdir w;
  static bool ready = false;
  if (!ready) {
    ready = true;
    auto g = w.run("gen-data --m 60 --n 150 --seed 3 --out d.csv");
    REQUIRE(g.code == 0);
    std::ofstream(w.file("oracle.json")) << R"({"constituents": [{"kind": "decision_tree", "seed": 1}]})";
    auto t = w.run("train --data d.csv --config oracle.json --kind vote_majority --out o.bin --seed 2");
    REQUIRE(t.code == 0);
  }
  return w;
}

// The config echo is one stderr line: "mtdsim <cmd> {json}".
json echoed(const Run& r, const std::string& cmd) {
  std::istringstream in(r.err);
  const std::string prefix = "mtdsim " + cmd + " ";
  for (std::string line; std::getline(in, line);) {
    if (line.rfind(prefix, 0) == 0) return json::parse(line.substr(prefix.size()));
  }
  FAIL("no config echo for " << cmd);
  return {};
}

}  // namespace

TEST_CASE("help, version, and usage errors") {
  Workdir w;
  auto help = w.run("--help");
  CHECK(help.code == 0);
  for (const char* sub : {"gen-data", "train", "serve", "attack", "fingerprint", "sweep", "report"}) {
    CHECK(help.out.find(sub) != std::string::npos);
  }
  CHECK(w.run("--version").code == 0);
  auto none = w.run("");
  CHECK(none.code == 1);
  CHECK(none.err.find("Usage") != std::string::npos);
  CHECK(w.run("train").code == 1);
  CHECK(w.run("gen-data --bogus").code == 1);
  CHECK(w.run("attack query").code == 1);
  CHECK(w.run("gen-data --m notanumber").code == 1);
  auto sub_help = w.run("attack query --help");
  CHECK(sub_help.code == 0);
  CHECK(sub_help.out.find("--n-max") != std::string::npos);
}

TEST_CASE("gen-data writes a dataset and echoes its config") {
  Workdir w;
  auto r = w.run("gen-data --m 40 --n 50 --delta 0.5 --layout generic --out x.csv --seed 11");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(w.file("x.csv")));
  CHECK(fs::exists(w.file("x.catalog.json")));
  auto cfg = echoed(r, "gen-data");
  CHECK(cfg["synth"]["m"] == 40);
  CHECK(cfg["synth"]["seed"] == 11);
  CHECK(cfg["synth"]["layout"] == "generic");
  auto again = w.run("gen-data --m 40 --n 50 --delta 0.5 --layout generic --out y.csv --seed 11");
  CHECK(json::parse(again.out)["fingerprint"] == json::parse(r.out)["fingerprint"]);
  CHECK(w.run("gen-data --layout spiral --out z.csv").code == 1);
  CHECK(w.run("gen-data --delta 1.5 --out z.csv").code == 1);
}

TEST_CASE("output directory environment variable") {
  Workdir w;
  auto r = w.run("gen-data --m 20 --n 20 --out e.csv", "MTDSIM_OUT_DIR=outdir");
  REQUIRE(r.code == 0);
  CHECK(fs::exists(w.path / "outdir" / "e.csv"));
  CHECK(fs::exists(w.path / "outdir" / "e.catalog.json"));
}

TEST_CASE("train, attack, and fingerprint") {
  const auto& w = shared();
  CHECK(fs::exists(w.file("o.bin")));
  auto q = w.run("attack query --oracle o.bin --mode graybox --n-max 100 --samples 5 --summary s.json --out q.jsonl");
  REQUIRE(q.code == 0);
  auto cfg = echoed(q, "attack query");
  CHECK(cfg["request"]["n_max"] == 100);
  CHECK(cfg["request"]["threat"] == "graybox");
  auto summary = json::parse(slurp(w.file("s.json")));
  CHECK(summary.contains("evasion_rate"));
  std::istringstream lines(slurp(w.file("q.jsonl")));
  int n = 0;
  for (std::string l; std::getline(lines, l);) n += !l.empty();
  CHECK(n == 5);

  auto f = w.run("fingerprint nature --oracle o.bin --n 10 --samples 2");
  REQUIRE(f.code == 0);
  CHECK(json::parse(f.out)["verdict"] == "static");
  auto b = w.run("fingerprint budget --oracle o.bin --n-large 40 --resolution 10");
  REQUIRE(b.code == 0);
  CHECK(json::parse(b.out)["hybrid"] == false);

  CHECK(w.run("attack query --oracle missing.bin").code == 2);
  CHECK(w.run("attack query --oracle o.bin --mode sideways").code == 1);
  CHECK(w.run("attack query --oracle o.bin --theta-t 3").code == 1);
  CHECK(w.run("fingerprint budget --oracle o.bin --n-large 10 --resolution 10").code == 1);
  CHECK(w.run("attack query --oracle o.bin --remote 127.0.0.1:1 --samples 1").code == 2);
}

TEST_CASE("sweep and report conversion") {
  const auto& w = shared();
  json spec{{"workspace", w.file("o.bin")},
            {"attack", {{"type", "query"}, {"threat", "graybox"}, {"samples", 4}}},
            {"axes", {{"n_max", {5, 50}}}},
            {"repetitions", 2},
            {"seed", 1}};
  std::ofstream(w.file("spec.json")) << spec.dump();
  auto a = w.run("sweep --spec spec.json --jobs 2 --out a.jsonl");
  REQUIRE(a.code == 0);
  auto b = w.run("sweep --spec spec.json --out b.jsonl");
  REQUIRE(b.code == 0);
  CHECK(slurp(w.file("a.jsonl")) == slurp(w.file("b.jsonl")));
  auto c = w.run("sweep --spec spec.json --out c.jsonl --seed 99");
  CHECK(echoed(c, "sweep")["spec"]["seed"] == 99);

  auto csv = w.run("sweep --spec spec.json --format csv");
  REQUIRE(csv.code == 0);
  CHECK(csv.out.rfind("cell,repetition,seed,", 0) == 0);

  REQUIRE(w.run("report --in a.jsonl --out a.csv").code == 0);
  REQUIRE(w.run("report --in a.csv --out back.jsonl").code == 0);
  CHECK(slurp(w.file("back.jsonl")) == slurp(w.file("a.jsonl")));
  CHECK(w.run("report --in missing.jsonl --out x.csv").code == 2);
  std::ofstream(w.file("broken.csv")) << "cell,seed\n";
  CHECK(w.run("report --in broken.csv --out x.jsonl").code == 2);
  CHECK(w.run("sweep --spec spec.json --format xml").code == 1);
  std::ofstream(w.file("bad_spec.json")) << R"({"repetitions": 0})";
  CHECK(w.run("sweep --spec bad_spec.json").code == 1);
}

TEST_CASE("serve answers a remote attack") {
  const auto& w = shared();
  const auto log = w.file("serve.log");
  const std::string cmd = "'" MTDSIM_CLI "' serve --oracle '" + w.file("o.bin") +
                          "' --port 0 --max-queries 1000 2>'" + log + "' & echo $!";
  FILE* p = popen(cmd.c_str(), "r");
  REQUIRE(p);
  char buf[64] = {0};
  REQUIRE(fgets(buf, sizeof buf, p));
  pclose(p);
  const int pid = std::atoi(buf);
  int port = 0;
  for (int i = 0; i < 100 && port == 0; ++i) {
    const auto text = slurp(log);
    const auto at = text.find("listening on ");
    if (at != std::string::npos && text.find('\n', at) != std::string::npos) {
      port = std::atoi(text.c_str() + text.find(':', at) + 1);
    } else {
      ::usleep(100000);
    }
  }
  REQUIRE(port > 0);
  auto r = w.run("fingerprint nature --oracle o.bin --n 5 --samples 2 --remote 127.0.0.1:" + std::to_string(port));
  CHECK(r.code == 0);
  CHECK(json::parse(r.out)["verdict"] == "static");
  ::kill(pid, SIGTERM);
}
