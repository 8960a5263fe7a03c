#include <string>
#include <vector>

#include "gradcf/cli.hpp"

int main(int argc, char** argv) {
  return gradcf::cli::run(std::vector<std::string>(argv, argv + argc));
}
