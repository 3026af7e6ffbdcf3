#include "microrl/cli.hpp"

int main(int argc, char** argv) { return microrl::cli_main(argc, argv); }
