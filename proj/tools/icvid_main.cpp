#include "icvid/cli.hpp"

int main(int argc, char** argv) { return icvid::run_cli(argc, argv); }
