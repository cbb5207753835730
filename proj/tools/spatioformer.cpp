#include "spatioformer/cli/cli.hpp"

int main(int argc, char** argv) { return spatioformer::cli::dispatch(argc, argv); }
