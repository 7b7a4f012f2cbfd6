#include "rfv/cli/experiment.hpp"

int main(int argc, char **argv) { return rfv::cli::run(argc, argv); }
