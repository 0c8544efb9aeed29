#include "nestedcp/cli.hpp"

int main(int argc, char** argv) { return nestedcp::cli::run(argc, argv); }
