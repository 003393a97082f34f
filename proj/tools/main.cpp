#include <string>
#include <vector>

#include "osebm/cli.hpp"

int main(int argc, char** argv) {
  return osebm::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
