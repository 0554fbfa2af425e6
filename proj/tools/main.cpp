#include "seqrl/cli.hpp"

int main(int argc, char** argv) {
  return seqrl::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
