#pragma once

namespace changeflow {

/// Keeps large buffers (im2col patches, activations) on the heap instead of
/// fresh mmap regions, which avoids repeated page faults in training loops.
/// Call once at program start; safe to call more than once.
void tune_allocator();

}  // namespace changeflow
