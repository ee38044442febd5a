#include "hbip/runner.hpp"

int main(int argc, char** argv) { return hbip::runCli(argc, argv); }
