#include "boxlift/cli.hpp"

int main(int argc, char** argv) { return boxlift::cli_main(argc, argv); }
