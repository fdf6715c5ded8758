#include "mbsync/cli.hpp"

int main(int argc, char** argv) { return mbsync::cli_main(argc, argv); }
