#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mtd {

enum class Label : std::uint8_t { kBenign = 0, kMalware = 1 };

inline int to_int(Label l) { return static_cast<int>(l); }
Label label_from_int(int v);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Precondition or argument violation by the caller.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column);
  std::size_t line() const { return line_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

using Rng = std::mt19937_64;

// Derives an independent stream seed from a base seed and a salt (splitmix64 finalizer).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

// FNV-1a, used for dataset fingerprints and parameter hashes.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a(std::span<const std::uint8_t> bytes, std::uint64_t h = 0xcbf29ce484222325ULL);

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

}  // namespace mtd
