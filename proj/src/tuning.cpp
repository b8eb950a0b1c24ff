#include "mcse/tuning.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace mcse {

void tune_allocator_for_large_buffers() {
#if defined(__GLIBC__)
  // Training allocates and frees multi-megabyte activation buffers every
  // step; keeping them in the arena avoids mmap/munmap page-fault churn.
  mallopt(M_MMAP_MAX, 0);
  mallopt(M_TRIM_THRESHOLD, -1);
#endif
}

}  // namespace mcse
