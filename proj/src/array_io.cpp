// SPDX-License-Identifier: Apache-2.0
#include "gradflow/array_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace gradflow {

namespace {

static_assert(std::endian::native == std::endian::little, "array files assume a little-endian host");

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw Error(ErrorCode::IOError, "truncated array file '" + path.string() + "'");
  }
  return v;
}

void flatten(const nlohmann::json& j, std::size_t depth, std::vector<std::int64_t>& shape, std::vector<double>& out) {
  if (j.is_number()) {
    if (depth != shape.size()) throw Error(ErrorCode::ShapeMismatch, "ragged array literal");
    out.push_back(j.get<double>());
    return;
  }
  if (!j.is_array() || j.empty()) throw Error(ErrorCode::ShapeMismatch, "array literal must be nested numbers");
  if (depth == shape.size()) {
    if (!out.empty()) throw Error(ErrorCode::ShapeMismatch, "ragged array literal");
    shape.push_back(static_cast<std::int64_t>(j.size()));
  } else if (depth > shape.size() || shape[depth] != static_cast<std::int64_t>(j.size())) {
    throw Error(ErrorCode::ShapeMismatch, "ragged array literal");
  }
  for (const auto& x : j) flatten(x, depth + 1, shape, out);
}

nlohmann::json nest(const Array& a, std::size_t depth, std::int64_t& off) {
  if (depth == a.shape.size()) return a.data[off++];
  nlohmann::json arr = nlohmann::json::array();
  for (std::int64_t i = 0; i < a.shape[depth]; ++i) arr.push_back(nest(a, depth + 1, off));
  return arr;
}

}  // namespace

Array read_array_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IOError, "cannot open '" + path.string() + "'");
  auto rank = get<std::int64_t>(in, path);
  if (rank < 0 || rank > 16) throw Error(ErrorCode::IOError, "bad rank in '" + path.string() + "'");
  Array a;
  for (std::int64_t i = 0; i < rank; ++i) {
    auto d = get<std::int64_t>(in, path);
    if (d < 1) throw Error(ErrorCode::IOError, "bad dimension in '" + path.string() + "'");
    a.shape.push_back(d);
  }
  a.data.resize(static_cast<std::size_t>(numel(a.shape)));
  for (double& v : a.data) v = get<double>(in, path);
  return a;
}

void write_array_file(const std::filesystem::path& path, const Array& a) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IOError, "cannot write '" + path.string() + "'");
  put<std::int64_t>(out, static_cast<std::int64_t>(a.shape.size()));
  for (std::int64_t d : a.shape) put<std::int64_t>(out, d);
  for (double v : a.data) put<double>(out, v);
  if (!out) throw Error(ErrorCode::IOError, "write to '" + path.string() + "' failed");
}

Array parse_array_literal(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw SyntaxError(e.byte, "bad array literal");
  }
  Array a;
  flatten(j, 0, a.shape, a.data);
  return a;
}

std::string format_array_literal(const Array& a) {
  std::int64_t off = 0;
  return nest(a, 0, off).dump();
}

}  // namespace gradflow
