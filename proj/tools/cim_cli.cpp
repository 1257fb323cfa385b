#include "cim/cli.hpp"

int main(int argc, char** argv) { return cim::cli::run(argc, argv); }
