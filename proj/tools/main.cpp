#include "prunelab/cli.hpp"

int main(int argc, char** argv) { return prunelab::cli_main(argc, argv); }
