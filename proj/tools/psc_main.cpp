#include "psc/cli.hpp"

int main(int argc, char** argv) { return psc::cli::run(argc, argv); }
