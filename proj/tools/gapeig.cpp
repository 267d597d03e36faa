#include "gapeig/cli.hpp"

int main(int argc, char** argv) { return gapeig::cli::main(argc, argv); }
