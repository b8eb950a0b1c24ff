#pragma once

namespace mcse {

/// Process-wide allocator tuning for workloads that cycle large buffers.
void tune_allocator_for_large_buffers();

}  // namespace mcse
