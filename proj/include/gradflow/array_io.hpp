// SPDX-License-Identifier: Apache-2.0
//
// Array files: little-endian int64 rank, int64 dims, then float64 payload.
// Inline literals are nested JSON arrays, e.g. `[[1,2],[3,4]]` or `2.5`.
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "gradflow/interpreter.hpp"

namespace gradflow {

Array read_array_file(const std::filesystem::path& path);
void write_array_file(const std::filesystem::path& path, const Array& a);

Array parse_array_literal(std::string_view text);
std::string format_array_literal(const Array& a);

}  // namespace gradflow
