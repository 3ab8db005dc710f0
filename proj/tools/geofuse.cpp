#include "geofuse/cli/commands.hpp"

int main(int argc, char** argv) { return geofuse::cli::run(argc, argv); }
