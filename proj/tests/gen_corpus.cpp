// SPDX-License-Identifier: Apache-2.0
//
// Writes the test kernels as program files: gen_corpus <dir>.
#include <filesystem>
#include <iostream>

#include "gradflow/frontend.hpp"
#include "kernels.hpp"

int main(int argc, char** argv) {
  using namespace gradflow;
  if (argc != 2) {
    std::cerr << "usage: gen_corpus <dir>\n";
    return 1;
  }
  std::filesystem::path dir(argv[1]);
  std::filesystem::create_directories(dir);
  for (const kernels::Kernel& k : kernels::corpus()) save_program(dir / (k.name + ".json"), k.program);
  save_program(dir / "scaled_products.json", kernels::scaled_products());
  save_program(dir / "doubling.json", kernels::doubling_loop(true));
  save_program(dir / "while_loop.json", kernels::while_loop());
  return 0;
}
