// SPDX-License-Identifier: Apache-2.0
//
// Test programs shared by the unit tests, the acceptance binary and the corpus
// generator.
#pragma once

#include <string>
#include <vector>

#include "gradflow/ir.hpp"

namespace gradflow::kernels {

struct Kernel {
  std::string name;
  Program program;
  IntBindings params;
};

Program elementwise_chain();
Program double_read();
Program overwrite_clear();
Program map_reduction_2d();
Program triangular_nest();
Program seidel();
Program strided_loops();
Program doubling_loop(bool with_inverse);
Program two_branch();
Program matmul_sum();
Program scaled_products(DType dtype = DType::Float32);
Program dead_nodes(bool with_dead = true);
Program loop_carried();
Program ping_pong();
Program loop_with_branch();
Program while_loop();

/// Every differentiable kernel with small parameters (Seidel at N=40,
/// TSTEPS=10; scaled products in float64 at N=4).
std::vector<Kernel> corpus();

}  // namespace gradflow::kernels
