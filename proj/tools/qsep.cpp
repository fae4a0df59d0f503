#include "qsep/cli.hpp"

int main(int argc, char** argv) { return qsep::run_cli(argc, argv); }
