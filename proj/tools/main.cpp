#include "ijcov/cli.hpp"

int main(int argc, char** argv) { return ijcov::cli_dispatch(argc, argv); }
