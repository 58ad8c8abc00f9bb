#include "teracon/cli.hpp"

int main(int argc, char** argv) { return teracon::cli_main(argc, argv); }
