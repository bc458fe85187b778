#include "invlab/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace invlab {

// Defined in kernels_avx2.cpp; nullptr when the TU was built without AVX2.
const KernelTable* avx2_compiled_table();

namespace {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2");
#else
  return false;
#endif
}

const KernelTable* select() {
  const KernelTable* avx2 = avx2_compiled_table();
  if (avx2 != nullptr && !cpu_has_avx2()) avx2 = nullptr;

  if (const char* forced = std::getenv("INVLAB_KERNELS")) {
    if (std::strcmp(forced, "scalar") == 0) return &scalar_kernels();
    if (std::strcmp(forced, "avx2") == 0 && avx2 != nullptr) return avx2;
  }
  return avx2 != nullptr ? avx2 : &scalar_kernels();
}

}  // namespace

const KernelTable* avx2_kernels() {
  const KernelTable* avx2 = avx2_compiled_table();
  return (avx2 != nullptr && cpu_has_avx2()) ? avx2 : nullptr;
}

const KernelTable& kernels() {
  static const KernelTable* active = select();
  return *active;
}

}  // namespace invlab
