#include "cpql/cli.hpp"

int main(int argc, char** argv) { return cpql::run_cli(argc, argv); }
