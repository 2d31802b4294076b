#include "canonet/cli.hpp"

int main(int argc, char** argv) {
  return canonet::cli::run(argc, argv);
}
