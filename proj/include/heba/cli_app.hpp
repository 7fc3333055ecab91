#pragma once

#include <memory>

namespace CLI {
class App;
}

namespace heba::cli {

// Fully wired CLI application (subcommands, flags, callbacks). Exposed so
// tests can reflect over the registered options; the returned app keeps its
// option storage alive internally.
std::unique_ptr<CLI::App> build_app();

int run(int argc, const char* const* argv);

}  // namespace heba::cli
