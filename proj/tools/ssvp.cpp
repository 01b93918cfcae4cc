#include "ssvp/cli.hpp"

int main(int argc, char** argv) {
  return ssvp::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
