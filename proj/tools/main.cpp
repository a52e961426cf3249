#include "ivdg/harness.hpp"

int main(int argc, char** argv) { return ivdg::harness::cli_main(argc, argv); }
