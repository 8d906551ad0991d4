// SPDX-License-Identifier: Apache-2.0
//
// Reference executor for forward and backward programs.
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "gradflow/analysis.hpp"
#include "gradflow/ir.hpp"

namespace gradflow {

/// Dense row-major array. float32 data is kept as double, rounded on write.
struct Array {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
  DType dtype = DType::Float64;

  static Array zeros(std::vector<std::int64_t> shape, DType dtype = DType::Float64);
  static Array scalar(double v, DType dtype = DType::Float64);
  std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
  double value() const { return data.at(0); }
  friend bool operator==(const Array&, const Array&) = default;
};

using ArrayMap = std::map<std::string, Array>;
using Coords = std::vector<std::int64_t>;
using StorePolicy = std::set<ValueKey>;

struct BranchRecord {
  std::string branch;
  Coords coords;
  int arm = -1;
};

struct Tape {
  IntBindings params;
  std::map<ValueKey, std::map<Coords, Array>> stored_values;
  std::vector<BranchRecord> branch_trace;
  std::map<std::pair<std::string, Coords>, std::vector<std::int64_t>> iterate_records;

  /// Snapshot whose coordinates are the longest prefix of `coords`.
  const Array* find(const ValueKey& key, const Coords& coords) const;
  /// Arm taken by `branch` at `coords`; -1 when no arm ran.
  int arm(const std::string& branch, const Coords& coords) const;
};

struct ExecutionResult {
  ArrayMap outputs;  // outputs, the dependent and every written array
  Tape tape;
  std::int64_t op_count = 0;
  std::uint64_t signature = 0;  // hash of branch arms and kink outcomes
};

class Executor {
 public:
  /// Compiles `p` for fixed parameters. `store` names the values snapshotted
  /// during forward runs.
  Executor(const Program& p, IntBindings params, StorePolicy store = {});
  ~Executor();
  Executor(Executor&&) noexcept;
  Executor& operator=(Executor&&) noexcept;

  ExecutionResult forward(const ArrayMap& inputs) const;
  /// Runs a backward program: arrays read but never written come from the
  /// tape. The dependent (gradient of the forward output) is seeded.
  ArrayMap backward(const Tape& tape, double seed = 1.0, std::int64_t* op_count = nullptr) const;

  const Program& program() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

ExecutionResult run_forward(const Program& p, const ArrayMap& inputs, const IntBindings& params,
                            const StorePolicy& store = {});
ArrayMap run_backward(const Program& backward, const Tape& tape, double seed = 1.0);

/// Program inputs drawn uniformly from [lo, hi) with a seeded generator.
ArrayMap random_inputs(const Program& p, const IntBindings& params, std::uint64_t seed, double lo = -1.0,
                       double hi = 1.0);

}  // namespace gradflow
