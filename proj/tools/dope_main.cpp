#include "dope/harness.hpp"

int main(int argc, char** argv) { return dope::harness::cli_main(argc, argv); }
