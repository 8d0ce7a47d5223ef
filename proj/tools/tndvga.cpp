#include <malloc.h>

#include "tndvga/cli.hpp"

int main(int argc, char** argv) {
  // Keep large tensor buffers on the heap instead of a fresh mmap per allocation.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return tndvga::run_cli(argc, argv);
}
