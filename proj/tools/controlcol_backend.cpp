// Built-in backends (palette generator, LUT propagator) behind the external
// file protocol. Usage: controlcol-backend <work_dir>/job.json
#include <iostream>

#include "controlcol/backends.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: controlcol-backend <job.json>\n";
    return 1;
  }
  try {
    controlcol::serve_builtin_job(argv[1]);
  } catch (const controlcol::InvalidArgument& e) {
    std::cerr << "controlcol-backend: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "controlcol-backend: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
