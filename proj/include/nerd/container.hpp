#pragma once

// Self-describing binary container used for model checkpoints and feature
// statistics:
//
//   bytes 0..7   magic "NERDCONT"
//   bytes 8..11  u32 format version (little-endian)
//   bytes 12..19 u64 header length N
//   next N bytes JSON header: {"version", "kind", "meta", "arrays": [
//                  {"name", "shape", "dtype": "f64", "offset", "count"}]}
//   payload      little-endian float64 arrays, offsets relative to payload start

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace nerd {

struct NamedArray {
  std::string name;
  std::vector<int> shape;
  std::vector<double> values;
};

struct Container {
  static constexpr std::uint32_t kVersion = 1;

  std::string kind;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& array(const std::string& name) const;
  const NamedArray* find(const std::string& name) const;
  void add(std::string name, std::vector<int> shape, std::vector<double> values);
};

/// Serializes to bytes; used for hashing and for the atomic file write.
std::vector<char> encode_container(const Container& c);
Container decode_container(const std::vector<char>& bytes, const std::string& origin);

/// Writes through a temporary file and renames, so readers never observe a
/// partially written container.
void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path);

}  // namespace nerd
