// SPDX-License-Identifier: Apache-2.0
//
// Program file format (JSON, format_version 1). Expressions are prefix
// s-expressions stored as strings. See README.md for the grammar.
#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "gradflow/ir.hpp"

namespace gradflow {

/// Parses and validates. Throws SyntaxError (malformed text, unknown keys,
/// unknown operators) or ValidationError.
Program parse_program(std::string_view text);
/// Parses without running validate.
Program parse_program_unchecked(std::string_view text);

/// Canonical form: sorted keys, two-space indent, trailing newline.
std::string serialize_program(const Program& p);

Program load_program(const std::filesystem::path& path);
void save_program(const std::filesystem::path& path, const Program& p);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace gradflow
