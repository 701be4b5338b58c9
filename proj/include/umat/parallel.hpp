#pragma once

#include <cstdint>
#include <functional>

namespace umat {

// Number of worker threads used by parallel_chunks when the caller passes 0.
// Defaults to 1 so results are reproducible out of the box; the CLI sets it
// from --workers.
void set_default_workers(int n);
int default_workers();

// Runs fn(chunk_index) for chunk_index in [0, n_chunks). Chunks are assigned
// to workers dynamically but the caller must make each chunk's work
// independent; combined with a fixed chunk decomposition this keeps results
// identical for every worker count. fn runs on the calling thread when the
// effective worker count is 1 or n_chunks <= 1.
void parallel_chunks(int64_t n_chunks, int workers, const std::function<void(int64_t)>& fn);

}  // namespace umat
