#include "core/featurespace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace mtd::featurespace {

using nlohmann::json;

FeatureVector::FeatureVector(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i] > 1) throw InvalidArgument("feature " + std::to_string(i) + " is not binary");
  }
}

FeatureVector FeatureVector::from_indices(std::size_t m, std::span<const std::uint32_t> set_bits) {
  FeatureVector v(m);
  for (auto i : set_bits) {
    if (i >= m) throw InvalidArgument("feature index " + std::to_string(i) + " out of range");
    v.set(i, true);
  }
  return v;
}

std::size_t FeatureVector::count() const {
  return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

std::vector<std::uint32_t> FeatureVector::set_indices() const {
  std::vector<std::uint32_t> out;
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    if (bits_[i]) out.push_back(static_cast<std::uint32_t>(i));
  }
  return out;
}

std::vector<double> FeatureVector::relaxed() const { return {bits_.begin(), bits_.end()}; }

// ---------------------------------------------------------------------------
// Catalog

Permission family_permission(Family f) {
  switch (f) {
    case Family::kS1:
    case Family::kS2:
    case Family::kS4:
      return {true, false};
    case Family::kS6:
      return {false, false};
    case Family::kS3:
    case Family::kS5:
    case Family::kS7:
    case Family::kS8:
    case Family::kGeneric:
      return {true, true};
  }
  return {true, true};
}

std::string family_name(Family f) {
  if (f == Family::kGeneric) return "GENERIC";
  return "S" + std::to_string(static_cast<int>(f) + 1);
}

Family family_from_name(const std::string& s) {
  if (s == "GENERIC") return Family::kGeneric;
  if (s.size() == 2 && s[0] == 'S' && s[1] >= '1' && s[1] <= '8') return static_cast<Family>(s[1] - '1');
  throw InvalidArgument("unknown feature family '" + s + "'");
}

std::string direction_name(Direction d) { return d == Direction::kAdd ? "add" : "remove"; }

Direction direction_from_name(const std::string& s) {
  if (s == "add") return Direction::kAdd;
  if (s == "remove") return Direction::kRemove;
  throw InvalidArgument("unknown direction '" + s + "'");
}

FeatureCatalog FeatureCatalog::from_entries(std::vector<CatalogEntry> entries) {
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) { return a.index < b.index; });
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i > 0 && entries[i].index == entries[i - 1].index) {
      throw InvalidArgument("duplicate catalog index " + std::to_string(entries[i].index));
    }
    if (entries[i].index != i) throw InvalidArgument("catalog indices are not contiguous from 0");
    const auto& e = entries[i];
    if (e.family != Family::kGeneric) {
      auto p = family_permission(e.family);
      if (p.add != e.add_allowed || p.remove != e.remove_allowed) {
        throw InvalidArgument("catalog entry " + std::to_string(e.index) + " permissions disagree with family " +
                              family_name(e.family));
      }
    }
  }
  FeatureCatalog c;
  c.entries_ = std::move(entries);
  return c;
}

FeatureCatalog FeatureCatalog::uniform(std::size_t m, Family family) {
  std::vector<CatalogEntry> entries(m);
  auto p = family_permission(family);
  for (std::size_t i = 0; i < m; ++i) entries[i] = {static_cast<std::uint32_t>(i), family, p.add, p.remove};
  return from_entries(std::move(entries));
}

bool FeatureCatalog::allows(std::size_t index, Direction d) const {
  const auto& e = entries_.at(index);
  return d == Direction::kAdd ? e.add_allowed : e.remove_allowed;
}

json FeatureCatalog::to_json() const {
  json arr = json::array();
  for (const auto& e : entries_) {
    arr.push_back({{"index", e.index}, {"family", family_name(e.family)}, {"add", e.add_allowed},
                   {"remove", e.remove_allowed}});
  }
  return arr;
}

FeatureCatalog FeatureCatalog::from_json(const json& j) {
  if (!j.is_array()) throw ParseError("catalog must be a JSON array", 1, 1);
  std::vector<CatalogEntry> entries;
  entries.reserve(j.size());
  for (std::size_t k = 0; k < j.size(); ++k) {
    const auto& o = j[k];
    try {
      CatalogEntry e;
      auto idx = o.at("index").get<long long>();
      if (idx < 0) throw InvalidArgument("negative index");
      e.index = static_cast<std::uint32_t>(idx);
      e.family = family_from_name(o.at("family").get<std::string>());
      e.add_allowed = o.at("add").get<bool>();
      e.remove_allowed = o.at("remove").get<bool>();
      entries.push_back(e);
    } catch (const json::exception& ex) {
      throw ParseError(std::string("catalog entry ") + std::to_string(k) + ": " + ex.what(), 1, k + 1);
    } catch (const InvalidArgument& ex) {
      throw ParseError(std::string("catalog entry ") + std::to_string(k) + ": " + ex.what(), 1, k + 1);
    }
  }
  try {
    return from_entries(std::move(entries));
  } catch (const InvalidArgument& ex) {
    throw ParseError(ex.what(), 1, 1);
  }
}

// ---------------------------------------------------------------------------
// CSV I/O

namespace {

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

void strip_cr(std::string& s) {
  if (!s.empty() && s.back() == '\r') s.pop_back();
}

}  // namespace

Dataset parse_dataset_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty dataset file", 1, 1);
  strip_cr(line);
  auto header = split_commas(line);
  if (header.empty() || header[0] != "label") throw ParseError("header must start with 'label'", 1, 1);
  const std::size_t m = header.size() - 1;
  for (std::size_t i = 0; i < m; ++i) {
    if (header[i + 1] != "f" + std::to_string(i)) {
      throw ParseError("unexpected header column '" + header[i + 1] + "'", 1, i + 2);
    }
  }
  Dataset out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    strip_cr(line);
    if (line.empty()) continue;
    auto cells = split_commas(line);
    if (cells.size() != m + 1) {
      throw ParseError("row has " + std::to_string(cells.size()) + " cells, expected " + std::to_string(m + 1),
                       lineno, std::min(cells.size(), m + 1) + 1);
    }
    std::vector<std::uint8_t> bits(m);
    Label label{};
    for (std::size_t c = 0; c <= m; ++c) {
      const auto& cell = cells[c];
      if (cell != "0" && cell != "1") throw ParseError("non-binary cell '" + cell + "'", lineno, c + 1);
      if (c == 0) {
        label = cell == "1" ? Label::kMalware : Label::kBenign;
      } else {
        bits[c - 1] = cell == "1" ? 1 : 0;
      }
    }
    out.push_back({static_cast<std::uint32_t>(out.size()), FeatureVector(std::move(bits)), label});
  }
  return out;
}

FeatureCatalog parse_catalog_json(std::istream& in) {
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& ex) {
    throw ParseError(std::string("catalog JSON: ") + ex.what(), 1, ex.byte);
  }
  return FeatureCatalog::from_json(j);
}

LoadedDataset load_dataset(const std::string& csv_path, const std::string& catalog_path) {
  std::ifstream csv(csv_path);
  if (!csv) throw IoError("cannot open dataset '" + csv_path + "'");
  std::ifstream cat(catalog_path);
  if (!cat) throw IoError("cannot open catalog '" + catalog_path + "'");
  LoadedDataset out{parse_dataset_csv(csv), parse_catalog_json(cat)};
  if (!out.samples.empty() && out.samples.front().features.size() != out.catalog.size()) {
    throw ParseError("dataset width " + std::to_string(out.samples.front().features.size()) +
                         " does not match catalog size " + std::to_string(out.catalog.size()),
                     1, 1);
  }
  return out;
}

void write_dataset_csv(std::ostream& out, const Dataset& samples) {
  const std::size_t m = samples.empty() ? 0 : samples.front().features.size();
  out << "label";
  for (std::size_t i = 0; i < m; ++i) out << ",f" << i;
  out << '\n';
  std::string row;
  for (const auto& s : samples) {
    row.clear();
    row.push_back(s.label == Label::kMalware ? '1' : '0');
    for (auto b : s.features.bits()) {
      row.push_back(',');
      row.push_back(b ? '1' : '0');
    }
    row.push_back('\n');
    out << row;
  }
}

void save_dataset(const std::string& csv_path, const std::string& catalog_path, const Dataset& samples,
                  const FeatureCatalog& catalog) {
  std::ofstream csv(csv_path);
  if (!csv) throw IoError("cannot write '" + csv_path + "'");
  write_dataset_csv(csv, samples);
  std::ofstream cat(catalog_path);
  if (!cat) throw IoError("cannot write '" + catalog_path + "'");
  cat << catalog.to_json().dump() << '\n';
}

// ---------------------------------------------------------------------------
// Splits

namespace {

std::size_t portion(std::size_t n, double r) {
  return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
}

void check_ratios(const SplitRatios& r) {
  for (double v : {r.train, r.validation, r.test}) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("split ratios must lie in [0,1]");
  }
  if (std::abs(r.train + r.validation + r.test - 1.0) > 1e-9) throw InvalidArgument("split ratios must sum to 1");
}

int positive_parts(const SplitRatios& r) {
  return (r.train > 0) + (r.validation > 0) + (r.test > 0);
}

}  // namespace

DatasetSplits split_dataset(const Dataset& samples, std::uint64_t seed, SplitRatios ratios, SplitRatios attack) {
  check_ratios(ratios);
  check_ratios(attack);
  if (samples.empty()) throw InvalidArgument("cannot split an empty dataset");

  DatasetSplits out;
  out.seed = seed;
  Rng rng(seed);
  for (Label cls : {Label::kBenign, Label::kMalware}) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].label == cls) idx.push_back(i);
    }
    if (idx.empty()) throw InvalidArgument("class " + std::to_string(to_int(cls)) + " has no samples");
    if (idx.size() < static_cast<std::size_t>(positive_parts(ratios))) {
      throw InvalidArgument("class " + std::to_string(to_int(cls)) + " has fewer samples than splits");
    }
    std::shuffle(idx.begin(), idx.end(), rng);

    const std::size_t n = idx.size();
    const std::size_t n_test = portion(n, ratios.test);
    const std::size_t n_val = portion(n, ratios.validation);
    const std::size_t n_train = n - n_test - n_val;

    const std::size_t a_final = portion(n_test, attack.test);
    const std::size_t a_val = portion(n_test, attack.validation);
    const std::size_t a_train = n_test - a_final - a_val;

    std::size_t pos = 0;
    auto take = [&](Dataset& dst, std::size_t k) {
      for (std::size_t i = 0; i < k; ++i) dst.push_back(samples[idx[pos++]]);
    };
    take(out.train, n_train);
    take(out.validation, n_val);
    take(out.attack_train, a_train);
    take(out.attack_validation, a_val);
    take(out.attack_final, a_final);
  }
  // Interleave classes deterministically so prefixes of a split see both labels.
  for (Dataset* d : {&out.train, &out.validation, &out.attack_train, &out.attack_validation, &out.attack_final}) {
    std::shuffle(d->begin(), d->end(), rng);
  }
  return out;
}

json sample_to_json(const Sample& s) {
  return {{"id", s.id}, {"label", to_int(s.label)}, {"features", s.features.set_indices()}};
}

Sample sample_from_json(const json& j, std::size_t m) {
  Sample s;
  s.id = j.at("id").get<std::uint32_t>();
  s.label = label_from_int(j.at("label").get<int>());
  auto idx = j.at("features").get<std::vector<std::uint32_t>>();
  s.features = FeatureVector::from_indices(m, idx);
  return s;
}

namespace {

json dataset_to_json(const Dataset& d) {
  json arr = json::array();
  for (const auto& s : d) arr.push_back(sample_to_json(s));
  return arr;
}

Dataset dataset_from_json(const json& j, std::size_t m) {
  Dataset d;
  for (const auto& e : j) d.push_back(sample_from_json(e, m));
  return d;
}

}  // namespace

json DatasetSplits::to_json() const {
  return {{"seed", seed},
          {"train", dataset_to_json(train)},
          {"validation", dataset_to_json(validation)},
          {"attack_train", dataset_to_json(attack_train)},
          {"attack_validation", dataset_to_json(attack_validation)},
          {"attack_final", dataset_to_json(attack_final)}};
}

DatasetSplits DatasetSplits::from_json(const json& j, std::size_t m) {
  DatasetSplits s;
  s.seed = j.at("seed").get<std::uint64_t>();
  s.train = dataset_from_json(j.at("train"), m);
  s.validation = dataset_from_json(j.at("validation"), m);
  s.attack_train = dataset_from_json(j.at("attack_train"), m);
  s.attack_validation = dataset_from_json(j.at("attack_validation"), m);
  s.attack_final = dataset_from_json(j.at("attack_final"), m);
  return s;
}

// ---------------------------------------------------------------------------
// Statistics

std::vector<std::uint32_t> BenignFrequencyVector::ordered() const {
  std::vector<std::uint32_t> idx(freq.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return freq[a] > freq[b]; });
  return idx;
}

BenignFrequencyVector benign_frequencies(const Dataset& samples) {
  std::size_t benign = 0;
  std::vector<std::size_t> counts;
  for (const auto& s : samples) {
    if (s.label != Label::kBenign) continue;
    if (counts.empty()) counts.assign(s.features.size(), 0);
    ++benign;
    for (std::size_t i = 0; i < s.features.size(); ++i) counts[i] += s.features[i];
  }
  if (benign == 0) throw InvalidArgument("benign frequencies need at least one benign sample");
  BenignFrequencyVector out;
  out.freq.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    out.freq[i] = static_cast<double>(counts[i]) / static_cast<double>(benign);
  }
  return out;
}

std::uint64_t fingerprint(const Dataset& samples) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& s : samples) {
    const std::uint8_t lbl = static_cast<std::uint8_t>(s.label);
    h = fnv1a(std::span<const std::uint8_t>(&lbl, 1), h);
    h = fnv1a(std::span<const std::uint8_t>(s.features.bits()), h);
  }
  return h;
}

Dataset filter_label(const Dataset& samples, Label label) {
  Dataset out;
  for (const auto& s : samples) {
    if (s.label == label) out.push_back(s);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

std::string layout_name(FamilyLayout l) {
  switch (l) {
    case FamilyLayout::kRoundRobin: return "round-robin";
    case FamilyLayout::kAdditionOnly: return "addition-only";
    case FamilyLayout::kGeneric: return "generic";
  }
  return "round-robin";
}

FamilyLayout layout_from_name(const std::string& s) {
  if (s == "round-robin") return FamilyLayout::kRoundRobin;
  if (s == "addition-only") return FamilyLayout::kAdditionOnly;
  if (s == "generic") return FamilyLayout::kGeneric;
  throw InvalidArgument("unknown family layout '" + s + "'");
}

json SynthSpec::to_json() const {
  return {{"m", m}, {"n_per_class", n_per_class}, {"delta", delta}, {"layout", layout_name(layout)}, {"seed", seed}};
}

SynthSpec SynthSpec::from_json(const json& j) {
  SynthSpec s;
  s.m = j.value("m", s.m);
  s.n_per_class = j.value("n_per_class", s.n_per_class);
  s.delta = j.value("delta", s.delta);
  s.layout = layout_from_name(j.value("layout", layout_name(s.layout)));
  s.seed = j.value("seed", s.seed);
  return s;
}

SynthData synth_generate(const SynthSpec& spec) {
  if (spec.m == 0 || spec.n_per_class == 0) throw InvalidArgument("synthetic spec needs m > 0 and n_per_class > 0");
  if (!(spec.delta >= 0.0 && spec.delta < 1.0)) throw InvalidArgument("separation must lie in [0,1)");
  if (spec.layout == FamilyLayout::kRoundRobin && spec.m < 8) {
    throw InvalidArgument("round-robin layout needs at least 8 features");
  }

  const std::size_t m = spec.m;
  SynthData out;
  out.benign_p.assign(m, 0.0);
  out.malware_p.assign(m, 0.0);

  // Feature roles and noise levels come from a stream independent of the
  // family layout so that catalogs can vary over identical samples.
  Rng structure(derive_seed(spec.seed, 1));
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), structure);

  const auto block = static_cast<std::size_t>(std::lround(spec.delta * static_cast<double>(m) / 2.0));
  const double hi = 0.5 + spec.delta / 2.0;
  const double lo = 0.5 - spec.delta / 2.0;
  std::uniform_real_distribution<double> noise(0.02, 0.30);
  for (std::size_t k = 0; k < m; ++k) {
    const auto f = order[k];
    if (k < block) {
      out.benign_p[f] = hi;
      out.malware_p[f] = lo;
    } else if (k < 2 * block) {
      out.benign_p[f] = lo;
      out.malware_p[f] = hi;
    } else {
      const double p = noise(structure);
      out.benign_p[f] = p;
      out.malware_p[f] = p;
    }
  }

  Rng draw(derive_seed(spec.seed, 2));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  out.samples.reserve(2 * spec.n_per_class);
  for (std::size_t i = 0; i < 2 * spec.n_per_class; ++i) {
    const Label label = (i % 2 == 0) ? Label::kBenign : Label::kMalware;
    const auto& p = label == Label::kBenign ? out.benign_p : out.malware_p;
    std::vector<std::uint8_t> bits(m);
    for (std::size_t f = 0; f < m; ++f) bits[f] = unit(draw) < p[f] ? 1 : 0;
    out.samples.push_back({static_cast<std::uint32_t>(i), FeatureVector(std::move(bits)), label});
  }

  std::vector<CatalogEntry> entries(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto& e = entries[i];
    e.index = static_cast<std::uint32_t>(i);
    switch (spec.layout) {
      case FamilyLayout::kRoundRobin: {
        e.family = static_cast<Family>(i % 8);
        auto p = family_permission(e.family);
        e.add_allowed = p.add;
        e.remove_allowed = p.remove;
        break;
      }
      case FamilyLayout::kAdditionOnly:
        e.family = Family::kGeneric;
        e.add_allowed = true;
        e.remove_allowed = false;
        break;
      case FamilyLayout::kGeneric:
        e.family = Family::kGeneric;
        break;
    }
  }
  out.catalog = FeatureCatalog::from_entries(std::move(entries));
  return out;
}

}  // namespace mtd::featurespace
