// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "gradflow/symexpr.hpp"

namespace gradflow {

/// Symbolic partial derivative of `body` with respect to the free name `wrt`,
/// simplified. Non-smooth operations (abs, min, max, sign, floor-div, mod,
/// comparisons) get their almost-everywhere derivative: d|x|/dx at 0 is 0 and
/// min/max ties select the first operand. One warning per non-smooth op that
/// depends on `wrt` is appended to `warnings` when it is non-null.
SymExpr differentiate(const SymExpr& body, std::string_view wrt,
                      std::vector<std::string>* warnings = nullptr);

}  // namespace gradflow
