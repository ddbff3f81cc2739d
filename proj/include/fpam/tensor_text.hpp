#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

namespace fpam {

// Canonical text dump: line 1 `dims: d0 d1 ...`, then whitespace-separated
// row-major values printed with `%.9e`, one row of the last axis per line.
struct TextTensor {
  std::vector<std::size_t> dims;
  std::vector<double> values;
};

void write_tensor_text(std::ostream& out, std::span<const std::size_t> dims, std::span<const double> values);
void write_tensor_text(const std::filesystem::path& path, std::span<const std::size_t> dims,
                       std::span<const double> values);
TextTensor read_tensor_text(std::istream& in);
TextTensor read_tensor_text(const std::filesystem::path& path);

}  // namespace fpam
