#include "rangeaug/cli.hpp"

int main(int argc, char** argv) { return rangeaug::run_cli(argc, argv); }
