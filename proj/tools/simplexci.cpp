#include "simplexci/cli.hpp"

int main(int argc, char** argv) { return simplexci::cli::run(argc, argv); }
