#include "jumpsde/cli.hpp"

int main(int argc, char** argv) { return jumpsde::cli::run(argc, argv); }
