#include "chatir/parallel.hpp"

#include <omp.h>

namespace chatir {

int max_threads() { return omp_get_max_threads(); }

}  // namespace chatir
