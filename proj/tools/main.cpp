#include "fqat/commands.hpp"

int main(int argc, char** argv) { return fqat::cli::run_cli(argc, argv); }
