#include "changeflow/runtime.hpp"
#include "commands.hpp"

int main(int argc, char** argv) {
  changeflow::tune_allocator();
  return changeflow::cli::run(argc, argv);
}
