#include <CLI11.hpp>

#include <cstdio>

int main(int argc, char** argv) {
  CLI::App app{"lasr: articulated shape reconstruction from video measurements"};
  CLI11_PARSE(app, argc, argv);
  std::puts("no subcommand given; see --help");
  return 2;
}
