#include "actgraph/cli.hpp"

int main(int argc, char** argv) { return actgraph::cli::run(argc, argv); }
