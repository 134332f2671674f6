#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace chatir::metrics {

// Unweighted mean of per-class F1 over the classes that occur in truth or
// prediction.
double macro_f1(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                std::size_t classes);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

PrecisionRecall precision_recall(const std::vector<bool>& truth, const std::vector<bool>& predicted);

// ranks are 1-based positions of the true item.
double recall_at(std::span<const std::size_t> ranks, std::size_t k);
double mean_reciprocal_rank(std::span<const std::size_t> ranks);

}  // namespace chatir::metrics
