#include "odsel/cli.hpp"

int main(int argc, char** argv) { return odsel::run_cli(argc, argv); }
