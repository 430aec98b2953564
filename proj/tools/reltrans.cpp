#include "reltrans/cli.hpp"

int main(int argc, char** argv) { return reltrans::cli::run(argc, argv); }
