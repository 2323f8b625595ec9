#include <iostream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "cnnic/commands.hpp"

int main(int argc, char** argv) {
#if defined(__GLIBC__)
  // Training allocates and frees the same large activation buffers every
  // step; keep them in the heap instead of returning them to the kernel.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  return cnnic::run_cli(argc, argv, std::cout, std::cerr);
}
