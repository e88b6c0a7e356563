#include "speechflow/cli.hpp"

int main(int argc, char** argv) { return speechflow::cli_main(argc, argv); }
