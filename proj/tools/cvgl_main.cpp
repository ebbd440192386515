#include "cvgl/cli.hpp"

int main(int argc, char** argv) { return cvgl::run_cli(argc, argv); }
