#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace prognos {

/// Dense float32 matrix stored as a one-line JSON preamble followed by
/// little-endian row-major float32 data. The preamble always carries `dim`
/// and `count`; callers add `ids`, `sha256` or other keys as needed.
struct VectorFile {
  nlohmann::json preamble;
  std::size_t dim = 0;
  std::size_t count = 0;
  std::vector<float> data;

  std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
  std::vector<float> row_copy(std::size_t i) const {
    auto r = row(i);
    return {r.begin(), r.end()};
  }
};

/// Writes atomically (temp file + rename). `dim` and `count` are set from the
/// arguments and override anything already in `preamble`.
void write_vector_file(const std::filesystem::path& path, nlohmann::json preamble,
                       std::size_t dim, std::span<const float> data);

/// Throws Error(CorruptBank) when the payload size disagrees with the preamble.
VectorFile read_vector_file(const std::filesystem::path& path);

}  // namespace prognos
