#include "sphevar/cli.hpp"

int main(int argc, char** argv) { return sphevar::cli::run_cli(argc, argv); }
