#include "cgr/cli.hpp"

int main(int argc, char** argv) { return cgr::run_cli(std::vector<std::string>(argv + 1, argv + argc)); }
