#include "retagnn/cli.hpp"

int main(int argc, char** argv) { return retagnn::cli::run(argc, argv); }
