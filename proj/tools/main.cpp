#include "ppon/cli.hpp"

int main(int argc, char** argv) { return ppon::cli::run(argc, argv); }
