#include "irtkit/cli.hpp"

int main(int argc, char** argv) { return irtkit::cli::run(argc, argv); }
