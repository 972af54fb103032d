#include "snpkit/cli.hpp"

int main(int argc, char** argv) { return snpkit::cli_main(argc, argv); }
