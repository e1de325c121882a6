#include "spdnet/cli.hpp"

int main(int argc, char** argv) { return spdnet::cli::dispatch(argc, argv); }
