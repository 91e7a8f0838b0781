#include "ionlattice/cli.hpp"

int main(int argc, char** argv) { return ionlattice::cli::run(argc, argv); }
