#include "nevicut/cli/run.hpp"

int main(int argc, char** argv) { return nevicut::cli::run_command(argc, argv); }
