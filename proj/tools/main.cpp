#include "geostyle/cli.hpp"

int main(int argc, char** argv) { return geostyle::run_cli(argc, argv); }
