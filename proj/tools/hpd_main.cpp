#include "hpd/cli.hpp"

int main(int argc, char** argv) { return hpd::run_cli(argc, argv); }
