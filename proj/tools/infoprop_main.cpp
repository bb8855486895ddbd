#include "infoprop/cli.hpp"

int main(int argc, char** argv) { return infoprop::run_cli(argc, argv); }
