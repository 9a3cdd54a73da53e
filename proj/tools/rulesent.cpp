#include "rulesent/cli.hpp"

int main(int argc, char** argv) { return rulesent::cli::run_cli(argc, argv); }
