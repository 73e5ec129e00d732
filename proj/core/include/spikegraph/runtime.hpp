#pragma once

namespace spikegraph {

/// Keeps freed tensor buffers in the heap instead of returning them to the OS,
/// which removes most page-fault cost from the training loop. No-op outside
/// glibc. Call once at process start.
void tune_allocator();

}  // namespace spikegraph
