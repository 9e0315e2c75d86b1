#include "halluc/cli.hpp"

int main(int argc, char** argv) { return halluc::cli_main(argc, argv); }
