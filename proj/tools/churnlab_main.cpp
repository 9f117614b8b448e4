#include "churnlab/cli.hpp"

int main(int argc, char** argv) { return churnlab::cli::run(argc, argv); }
