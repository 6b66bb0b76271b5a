#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace clvae {

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> dims;
  std::vector<double> data;
};

// Self-describing archive: a JSON metadata blob followed by named float64 arrays.
//
// Layout (little endian):
//   "CLVAEARC" | u32 version | u64 meta_len | meta bytes | u64 count |
//   count x (u32 name_len | name | u32 ndims | i64 dims[ndims] | f64 data[prod(dims)])
struct Archive {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json metadata = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray& get(const std::string& name) const;
  bool has(const std::string& name) const;
};

void write_archive(const std::filesystem::path& path, const Archive& archive);
Archive read_archive(const std::filesystem::path& path);

}  // namespace clvae
