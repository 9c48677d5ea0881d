#include "nesr/cli.hpp"

int main(int argc, char** argv) { return nesr::run_cli(argc, argv); }
