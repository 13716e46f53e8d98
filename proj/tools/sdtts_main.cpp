#include "sdtts/cli.hpp"

int main(int argc, char** argv) { return sdtts::run_cli(argc, argv); }
