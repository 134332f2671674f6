#pragma once

#include <cstddef>

namespace chatir {

// Selects between the OpenMP kernel and its serial reference. Both paths
// produce bit-identical results; the serial path exists for testing and
// benchmarking.
enum class Exec { serial, parallel };

// Batched gradient kernels split work into this many fixed chunks regardless
// of the thread count, so the reduction order (and therefore every bit of the
// result) does not depend on OMP_NUM_THREADS.
inline constexpr std::size_t kReductionChunks = 8;

int max_threads();

}  // namespace chatir
