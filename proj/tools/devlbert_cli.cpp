#include "devlbert/cli.hpp"

int main(int argc, char** argv) { return devlbert::run_cli(argc, argv); }
