#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "core/common.hpp"

namespace mtd::featurespace {

// Fixed-length binary feature vector. Every element is 0 or 1.
class FeatureVector {
 public:
  FeatureVector() = default;
  explicit FeatureVector(std::size_t m) : bits_(m, 0) {}
  explicit FeatureVector(std::vector<std::uint8_t> bits);

  static FeatureVector from_indices(std::size_t m, std::span<const std::uint32_t> set_bits);

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  void set(std::size_t i, bool v) { bits_[i] = v ? 1 : 0; }
  void flip(std::size_t i) { bits_[i] ^= 1; }

  std::size_t count() const;
  std::vector<std::uint32_t> set_indices() const;
  std::vector<double> relaxed() const;
  const std::vector<std::uint8_t>& bits() const { return bits_; }

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

struct Sample {
  std::uint32_t id = 0;
  FeatureVector features;
  Label label = Label::kBenign;
};

using Dataset = std::vector<Sample>;

enum class Family { kS1, kS2, kS3, kS4, kS5, kS6, kS7, kS8, kGeneric };

enum class Direction { kAdd, kRemove };

struct Permission {
  bool add = true;
  bool remove = true;
};

// Permitted perturbations per Android feature family. GENERIC permits both.
Permission family_permission(Family f);
std::string family_name(Family f);
Family family_from_name(const std::string& s);
std::string direction_name(Direction d);
Direction direction_from_name(const std::string& s);

struct CatalogEntry {
  std::uint32_t index = 0;
  Family family = Family::kGeneric;
  bool add_allowed = true;
  bool remove_allowed = true;
};

class FeatureCatalog {
 public:
  FeatureCatalog() = default;

  // Validates contiguity, uniqueness, and the family permission table.
  static FeatureCatalog from_entries(std::vector<CatalogEntry> entries);
  static FeatureCatalog uniform(std::size_t m, Family family);

  std::size_t size() const { return entries_.size(); }
  const CatalogEntry& entry(std::size_t i) const { return entries_.at(i); }
  const std::vector<CatalogEntry>& entries() const { return entries_; }
  bool allows(std::size_t index, Direction d) const;

  nlohmann::json to_json() const;
  static FeatureCatalog from_json(const nlohmann::json& j);

 private:
  std::vector<CatalogEntry> entries_;
};

struct SplitRatios {
  double train = 0.64;
  double validation = 0.16;
  double test = 0.20;
};

struct DatasetSplits {
  Dataset train;
  Dataset validation;
  Dataset attack_train;  // B_train: oracle relations for black-box substitutes
  Dataset attack_validation;
  Dataset attack_final;
  std::uint64_t seed = 0;

  nlohmann::json to_json() const;
  static DatasetSplits from_json(const nlohmann::json& j, std::size_t m);
};

struct BenignFrequencyVector {
  std::vector<double> freq;

  // Feature indices by descending benign frequency, ties by ascending index.
  std::vector<std::uint32_t> ordered() const;
};

enum class FamilyLayout { kRoundRobin, kAdditionOnly, kGeneric };

std::string layout_name(FamilyLayout l);
FamilyLayout layout_from_name(const std::string& s);

struct SynthSpec {
  std::size_t m = 100;
  std::size_t n_per_class = 1000;
  double delta = 0.6;
  FamilyLayout layout = FamilyLayout::kRoundRobin;
  std::uint64_t seed = 7;

  nlohmann::json to_json() const;
  static SynthSpec from_json(const nlohmann::json& j);
};

struct SynthData {
  Dataset samples;
  FeatureCatalog catalog;
  std::vector<double> benign_p;   // generating Bernoulli parameters
  std::vector<double> malware_p;
};

struct LoadedDataset {
  Dataset samples;
  FeatureCatalog catalog;
};

Dataset parse_dataset_csv(std::istream& in);
FeatureCatalog parse_catalog_json(std::istream& in);
LoadedDataset load_dataset(const std::string& csv_path, const std::string& catalog_path);
void write_dataset_csv(std::ostream& out, const Dataset& samples);
void save_dataset(const std::string& csv_path, const std::string& catalog_path, const Dataset& samples,
                  const FeatureCatalog& catalog);

// Stratified split: per class, test = floor(n*test), validation = floor(n*validation),
// remainder to train. The test portion is re-split with `attack` ratios into
// attack_validation/attack_final, remainder to attack_train.
DatasetSplits split_dataset(const Dataset& samples, std::uint64_t seed, SplitRatios ratios = {},
                            SplitRatios attack = {});

SynthData synth_generate(const SynthSpec& spec);

BenignFrequencyVector benign_frequencies(const Dataset& samples);

std::uint64_t fingerprint(const Dataset& samples);
Dataset filter_label(const Dataset& samples, Label label);

nlohmann::json sample_to_json(const Sample& s);
Sample sample_from_json(const nlohmann::json& j, std::size_t m);

}  // namespace mtd::featurespace
