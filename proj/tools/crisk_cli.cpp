#include "crisk/cli/app.hpp"

int main(int argc, char** argv) { return crisk::cli::run_cli(argc, argv); }
