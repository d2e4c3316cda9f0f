#include "great/cli.hpp"

int main(int argc, char** argv) { return great::cli::run(argc, argv); }
