#include "cli.hpp"
#include "spikegraph/runtime.hpp"

int main(int argc, char** argv) {
  spikegraph::tune_allocator();
  return spikegraph::cli::run(std::vector<std::string>(argv, argv + argc));
}
