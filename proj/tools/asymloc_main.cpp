#include "asymloc/cli.hpp"

int main(int argc, char** argv) { return asymloc::cli::run(argc, argv); }
