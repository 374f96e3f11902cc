#include "affectvlm/cli.hpp"

int main(int argc, char** argv) { return avlm::cli_dispatch(argc, argv); }
