#include <string>
#include <vector>

#include "genre/cli.hpp"

int main(int argc, char** argv) { return genre::cli::run(std::vector<std::string>(argv, argv + argc)); }
