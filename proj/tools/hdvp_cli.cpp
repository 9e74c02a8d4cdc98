#include "hdvp/pipeline/cli.hpp"

int main(int argc, char** argv) { return hdvp::pipeline::run_command(argc, argv); }
