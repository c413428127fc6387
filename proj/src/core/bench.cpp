#include "core/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace mtd::bench {

using nlohmann::json;

namespace {

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

double ratio(std::uint64_t a, std::uint64_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); }

}  // namespace

json MetricsReport::to_json() const {
  return {{"cell", cell},
          {"repetition", repetition},
          {"seed", seed},
          {"evasion_rate", opt(evasion_rate)},
          {"rer_mean", opt(rer_mean)},
          {"mean_queries", opt(mean_queries)},
          {"accuracy", accuracy},
          {"f1", f1},
          {"auc", auc},
          {"fpr", fpr},
          {"substitute_evaders", counts.substitute_evaders},
          {"oracle_evaders", counts.oracle_evaders},
          {"tp", counts.tp},
          {"fp", counts.fp},
          {"tn", counts.tn},
          {"fn", counts.fn},
          {"config", config},
          {"note", note}};
}

MetricsReport MetricsReport::from_json(const json& j) {
  MetricsReport r;
  r.cell = j.at("cell").get<std::string>();
  r.repetition = j.at("repetition").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.evasion_rate = opt_from(j.at("evasion_rate"));
  r.rer_mean = opt_from(j.at("rer_mean"));
  r.mean_queries = opt_from(j.at("mean_queries"));
  r.accuracy = j.at("accuracy").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.auc = j.at("auc").get<double>();
  r.fpr = j.at("fpr").get<double>();
  r.counts.substitute_evaders = j.at("substitute_evaders").get<std::uint64_t>();
  r.counts.oracle_evaders = j.at("oracle_evaders").get<std::uint64_t>();
  r.counts.tp = j.at("tp").get<std::uint64_t>();
  r.counts.fp = j.at("fp").get<std::uint64_t>();
  r.counts.tn = j.at("tn").get<std::uint64_t>();
  r.counts.fn = j.at("fn").get<std::uint64_t>();
  r.config = j.at("config");
  r.note = j.at("note").get<std::string>();
  return r;
}

std::optional<double> evasion_rate(std::span<const AttackOutcome> outcomes) {
  std::uint64_t denom = 0, num = 0;
  for (const auto& o : outcomes) {
    denom += o.substitute_evaders;
    num += o.substitute_evaders > 0 && o.success;
  }
  if (denom == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(denom);
}

double repeat_evasion_rate(QueryTarget& oracle, const FeatureVector& x, std::size_t attempts) {
  if (attempts == 0) throw InvalidArgument("attempts must be positive");
  std::size_t evaded = 0;
  for (std::size_t i = 0; i < attempts; ++i) evaded += oracle.query(x) == Label::kBenign;
  return 100.0 * static_cast<double>(evaded) / static_cast<double>(attempts);
}

double repeat_evasion_rate(const json& snapshot, const FeatureVector& x, std::size_t attempts) {
  auto oracle = Oracle::restore(snapshot);
  return repeat_evasion_rate(oracle, x, attempts);
}

double auc(std::span<const double> scores, std::span<const Label> truth) {
  if (scores.size() != truth.size()) throw InvalidArgument("score/label length mismatch");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg;
    i = j + 1;
  }
  double pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (truth[i] == Label::kMalware) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = static_cast<double>(n) - pos;
  if (pos == 0.0 || neg == 0.0) throw InvalidArgument("AUC needs both classes");
  return (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
}

void fill_confusion(MetricsReport& r, std::span<const Label> truth, std::span<const Label> predicted) {
  if (truth.size() != predicted.size()) throw InvalidArgument("truth/prediction length mismatch");
  Counts& c = r.counts;
  c.tp = c.fp = c.tn = c.fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const bool t = truth[i] == Label::kMalware, p = predicted[i] == Label::kMalware;
    if (t && p) ++c.tp;
    else if (!t && p) ++c.fp;
    else if (!t && !p) ++c.tn;
    else ++c.fn;
  }
  r.accuracy = ratio(c.tp + c.tn, truth.size());
  r.fpr = ratio(c.fp, c.fp + c.tn);
  r.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
}

namespace {

void require_both(std::span<const Label> truth) {
  const bool any_m = std::any_of(truth.begin(), truth.end(), [](Label l) { return l == Label::kMalware; });
  const bool any_b = std::any_of(truth.begin(), truth.end(), [](Label l) { return l == Label::kBenign; });
  if (!any_m || !any_b) throw InvalidArgument("metrics need both classes present");
}

}  // namespace

MetricsReport classification_metrics(Oracle& oracle, const Dataset& samples) {
  std::vector<Label> truth, predicted;
  std::vector<double> scores;
  for (const auto& s : samples) {
    truth.push_back(s.label);
    predicted.push_back(oracle.query(s.features));
    scores.push_back(oracle.confidence(s.features));
  }
  require_both(truth);
  MetricsReport r;
  fill_confusion(r, truth, predicted);
  r.auc = auc(scores, truth);
  return r;
}

TrafficComposition traffic_composition(double q, std::size_t total) {
  if (!(q >= 0.1 - 1e-12 && q <= 0.9 + 1e-12)) throw InvalidArgument("q must lie in [0.1, 0.9]");
  if (total == 0) throw InvalidArgument("total must be positive");
  TrafficComposition c;
  c.adversarial = static_cast<std::size_t>(std::llround(q * static_cast<double>(total)));
  c.benign = (total - c.adversarial) / 2;
  c.malware = total - c.adversarial - c.benign;
  return c;
}

MetricsReport mixed_traffic(QueryTarget& oracle, double q, const TrafficPools& pools, std::size_t total,
                            std::uint64_t seed, const std::function<double(const FeatureVector&)>& confidence,
                            TrafficComposition* composition) {
  auto comp = traffic_composition(q, total);
  if (pools.adversarial.empty() || pools.benign.empty() || pools.malware.empty()) {
    throw InvalidArgument("traffic pools must be non-empty");
  }
  Rng rng(seed);
  struct Item {
    const FeatureVector* x;
    Label truth;
  };
  std::vector<Item> stream;
  auto draw = [&](std::size_t need, std::size_t pool_size, auto get, Label truth) {
    if (need <= pool_size) {
      std::vector<std::size_t> idx(pool_size);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::shuffle(idx.begin(), idx.end(), rng);
      for (std::size_t i = 0; i < need; ++i) stream.push_back({get(idx[i]), truth});
    } else {
      comp.with_replacement = true;
      std::uniform_int_distribution<std::size_t> pick(0, pool_size - 1);
      for (std::size_t i = 0; i < need; ++i) stream.push_back({get(pick(rng)), truth});
    }
  };
  draw(comp.adversarial, pools.adversarial.size(), [&](std::size_t i) { return &pools.adversarial[i]; },
       Label::kMalware);
  draw(comp.benign, pools.benign.size(), [&](std::size_t i) { return &pools.benign[i].features; }, Label::kBenign);
  draw(comp.malware, pools.malware.size(), [&](std::size_t i) { return &pools.malware[i].features; },
       Label::kMalware);
  std::shuffle(stream.begin(), stream.end(), rng);

  std::vector<Label> truth, predicted;
  std::vector<double> scores;
  for (const auto& it : stream) {
    truth.push_back(it.truth);
    const Label y = oracle.query(*it.x);
    predicted.push_back(y);
    scores.push_back(confidence ? confidence(*it.x) : static_cast<double>(to_int(y)));
  }
  MetricsReport r;
  fill_confusion(r, truth, predicted);
  r.auc = auc(scores, truth);
  r.seed = seed;
  r.config = {{"q", q},
              {"total", total},
              {"adversarial", comp.adversarial},
              {"benign", comp.benign},
              {"malware", comp.malware},
              {"with_replacement", comp.with_replacement}};
  if (comp.with_replacement) r.note = "pool exhausted: sampled with replacement";
  if (composition) *composition = comp;
  return r;
}

// ---------------------------------------------------------------------------
// Report files

ReportFormat report_format_from_name(const std::string& s) {
  if (s == "csv") return ReportFormat::kCsv;
  if (s == "jsonl") return ReportFormat::kJsonl;
  throw InvalidArgument("unknown report format '" + s + "'");
}

const std::vector<std::string>& csv_columns() {
  static const std::vector<std::string> cols = {
      "cell", "repetition", "seed", "evasion_rate", "rer_mean", "mean_queries", "accuracy", "f1", "auc", "fpr",
      "substitute_evaders", "oracle_evaders", "tp", "fp", "tn", "fn", "config", "note"};
  return cols;
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, end);
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("unterminated quoted field", line_no, line.size());
  out.push_back(std::move(cur));
  return out;
}

double parse_double(const std::string& s, std::size_t line, std::size_t col) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("bad number '" + s + "'", line, col);
  return v;
}

std::uint64_t parse_uint(const std::string& s, std::size_t line, std::size_t col) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("bad integer '" + s + "'", line, col);
  return v;
}

}  // namespace

void emit_report(std::ostream& out, std::span<const MetricsReport> reports, ReportFormat format) {
  if (format == ReportFormat::kJsonl) {
    for (const auto& r : reports) out << r.to_json().dump() << '\n';
    return;
  }
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << '\n';
  auto o = [](const std::optional<double>& v) { return v ? fmt_double(*v) : std::string(); };
  for (const auto& r : reports) {
    const auto& c = r.counts;
    out << quote(r.cell) << ',' << r.repetition << ',' << r.seed << ',' << o(r.evasion_rate) << ','
        << o(r.rer_mean) << ',' << o(r.mean_queries) << ',' << fmt_double(r.accuracy) << ',' << fmt_double(r.f1)
        << ',' << fmt_double(r.auc) << ',' << fmt_double(r.fpr) << ',' << c.substitute_evaders << ','
        << c.oracle_evaders << ',' << c.tp << ',' << c.fp << ',' << c.tn << ',' << c.fn << ','
        << quote(r.config.dump()) << ',' << quote(r.note) << '\n';
  }
}

void emit_report(const std::string& path, std::span<const MetricsReport> reports, ReportFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  emit_report(out, reports, format);
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::vector<MetricsReport> parse_report(std::istream& in, ReportFormat format) {
  std::vector<MetricsReport> out;
  std::string line;
  std::size_t line_no = 0;
  if (format == ReportFormat::kJsonl) {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      try {
        out.push_back(MetricsReport::from_json(json::parse(line)));
      } catch (const json::exception& e) {
        throw ParseError(e.what(), line_no, 1);
      }
    }
    return out;
  }
  const auto& cols = csv_columns();
  if (!std::getline(in, line)) return out;
  ++line_no;
  if (split_csv_line(line, line_no) != cols) throw ParseError("unexpected report header", line_no, 1);
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t first_line = line_no;
    // A quoted field may span lines.
    std::string more;
    while (std::count(line.begin(), line.end(), '"') % 2 == 1 && std::getline(in, more)) {
      ++line_no;
      line += '\n' + more;
    }
    auto f = split_csv_line(line, first_line);
    if (f.size() != cols.size()) throw ParseError("expected " + std::to_string(cols.size()) + " fields", line_no, 1);
    auto od = [&](std::size_t i) -> std::optional<double> {
      if (f[i].empty()) return std::nullopt;
      return parse_double(f[i], line_no, i + 1);
    };
    MetricsReport r;
    r.cell = f[0];
    r.repetition = static_cast<int>(parse_uint(f[1], line_no, 2));
    r.seed = parse_uint(f[2], line_no, 3);
    r.evasion_rate = od(3);
    r.rer_mean = od(4);
    r.mean_queries = od(5);
    r.accuracy = parse_double(f[6], line_no, 7);
    r.f1 = parse_double(f[7], line_no, 8);
    r.auc = parse_double(f[8], line_no, 9);
    r.fpr = parse_double(f[9], line_no, 10);
    r.counts.substitute_evaders = parse_uint(f[10], line_no, 11);
    r.counts.oracle_evaders = parse_uint(f[11], line_no, 12);
    r.counts.tp = parse_uint(f[12], line_no, 13);
    r.counts.fp = parse_uint(f[13], line_no, 14);
    r.counts.tn = parse_uint(f[14], line_no, 15);
    r.counts.fn = parse_uint(f[15], line_no, 16);
    try {
      r.config = json::parse(f[16]);
    } catch (const json::exception& e) {
      throw ParseError(e.what(), line_no, 17);
    }
    r.note = f[17];
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<MetricsReport> load_report(const std::string& path, ReportFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return parse_report(in, format);
}

}  // namespace mtd::bench
