#include "gtc/cli.hpp"

int main(int argc, char** argv) { return gtc::cli::run(argc, argv); }
