#include "heba/cli_app.hpp"

int main(int argc, char** argv) { return heba::cli::run(argc, argv); }
