#pragma once

// Minimal readers for the two containers the UCI character-trajectories data
// ships in: a MATLAB level-5 MAT file, optionally inside a zip archive.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tsadv::detail {

struct MatArray {
  enum class Kind { numeric, character, cell, structure };

  Kind kind = Kind::numeric;
  std::string name;
  std::vector<std::size_t> dims;
  std::vector<double> numeric;  // column-major, converted to double
  std::vector<MatArray> cells;  // column-major
  std::vector<std::string> field_names;
  // elements * fields, element-major: fields[e * field_names.size() + f]
  std::vector<MatArray> fields;

  std::size_t element_count() const;
  const MatArray& field(const std::string& name, std::size_t element = 0) const;
};

// Little-endian level-5 MAT files, with or without zlib-compressed elements.
// Throws ConversionError on anything it cannot interpret.
std::map<std::string, MatArray> read_mat_v5(std::span<const std::uint8_t> bytes);

// Returns the uncompressed contents of the first entry whose file name (ignoring
// directories) equals `entry_name`. Supports stored and deflated entries.
std::vector<std::uint8_t> read_zip_entry(std::span<const std::uint8_t> archive, const std::string& entry_name);

std::vector<std::uint8_t> inflate_bytes(std::span<const std::uint8_t> in, bool raw_deflate, std::size_t size_hint);

}  // namespace tsadv::detail
