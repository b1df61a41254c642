#include "hjbac/cli/app.hpp"

int main(int argc, char** argv) { return hjbac::cli::run(argc, argv); }
