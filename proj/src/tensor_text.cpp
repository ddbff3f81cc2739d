#include "fpam/tensor_text.hpp"

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "fpam/errors.hpp"

namespace fpam {

void write_tensor_text(std::ostream& out, std::span<const std::size_t> dims, std::span<const double> values) {
  std::size_t count = dims.empty() ? 0 : 1;
  for (auto d : dims) count *= d;
  if (count != values.size()) throw ShapeError("tensor text: dims do not match value count");
  out << "dims:";
  for (auto d : dims) out << ' ' << d;
  out << '\n';
  const std::size_t row = dims.empty() ? 1 : dims.back();
  char buf[32];
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.9e", values[i]);
    out << buf << ((i + 1) % row == 0 ? '\n' : ' ');
  }
}

void write_tensor_text(const std::filesystem::path& path, std::span<const std::size_t> dims,
                       std::span<const double> values) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_tensor_text(out, dims, values);
  if (!out) throw DataError("write failed for " + path.string());
}

TextTensor read_tensor_text(std::istream& in) {
  std::string header;
  if (!std::getline(in, header) || header.rfind("dims:", 0) != 0) {
    throw DataError("tensor text: missing 'dims:' header");
  }
  TextTensor t;
  std::istringstream dims(header.substr(5));
  std::size_t d = 0;
  while (dims >> d) t.dims.push_back(d);
  if (t.dims.empty()) throw DataError("tensor text: empty dims");
  std::size_t count = 1;
  for (auto e : t.dims) count *= e;
  t.values.reserve(count);
  std::string token;
  while (in >> token) {
    try {
      t.values.push_back(std::stod(token));
    } catch (const std::exception&) {
      throw DataError("tensor text: bad value '" + token + "'");
    }
  }
  if (t.values.size() != count) {
    throw DataError("tensor text: expected " + std::to_string(count) + " values, got " +
                    std::to_string(t.values.size()));
  }
  return t;
}

TextTensor read_tensor_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return read_tensor_text(in);
}

}  // namespace fpam
