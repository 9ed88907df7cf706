#include <sparcd/cli.hpp>

int main(int argc, char** argv) { return sparcd::cli::run(argc, argv); }
