#include <iostream>

#include "secrms/cli.h"

int main(int argc, char** argv) { return secrms::run_cli(argc, argv, std::cout, std::cerr); }
