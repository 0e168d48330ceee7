#include "qsdist/cli.hpp"

int main(int argc, char** argv) { return qsdist::cli::run(argc, argv); }
