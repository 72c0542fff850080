#include "exvae/cli.hpp"

int main(int argc, char** argv) { return exvae::run_cli(argc, argv); }
