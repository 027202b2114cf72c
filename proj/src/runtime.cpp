#include "changeflow/runtime.hpp"

#include <malloc.h>

namespace changeflow {

void tune_allocator() {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, -1);
}

}  // namespace changeflow
