#include "chatir/metrics.hpp"

#include <stdexcept>

namespace chatir::metrics {

double macro_f1(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                std::size_t classes) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("macro_f1: size mismatch");
  std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] == predicted[i]) {
      ++tp[truth[i]];
    } else {
      ++fp[predicted[i]];
      ++fn[truth[i]];
    }
  }
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < classes; ++c) {
    if (tp[c] + fp[c] + fn[c] == 0) continue;
    ++counted;
    sum += 2.0 * static_cast<double>(tp[c]) / static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
  }
  return counted == 0 ? 0.0 : sum / static_cast<double>(counted);
}

PrecisionRecall precision_recall(const std::vector<bool>& truth, const std::vector<bool>& predicted) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("precision_recall: size mismatch");
  PrecisionRecall pr;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++pr.true_positives;
    if (predicted[i] && !truth[i]) ++pr.false_positives;
    if (!predicted[i] && truth[i]) ++pr.false_negatives;
  }
  const auto tp = static_cast<double>(pr.true_positives);
  if (pr.true_positives + pr.false_positives > 0) {
    pr.precision = tp / static_cast<double>(pr.true_positives + pr.false_positives);
  }
  if (pr.true_positives + pr.false_negatives > 0) {
    pr.recall = tp / static_cast<double>(pr.true_positives + pr.false_negatives);
  }
  return pr;
}

double recall_at(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t r : ranks) hits += r <= k ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(ranks.size());
}

double mean_reciprocal_rank(std::span<const std::size_t> ranks) {
  if (ranks.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t r : ranks) s += 1.0 / static_cast<double>(r);
  return s / static_cast<double>(ranks.size());
}

}  // namespace chatir::metrics
