#include "attriqe/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "attriqe/errors.hpp"

namespace attriqe::eval {
namespace {

void check_sizes(std::span<const double> scores, std::span<const Label> labels, const char* what) {
  if (scores.size() != labels.size()) {
    throw DimensionError(std::string(what) + ": " + std::to_string(scores.size()) + " scores for " +
                         std::to_string(labels.size()) + " labels");
  }
}

std::size_t count_bad(std::span<const Label> labels) {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), Label::bad));
}

}  // namespace

std::vector<std::size_t> rank_descending(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::optional<double> auc_instance(std::span<const double> scores, std::span<const Label> labels) {
  check_sizes(scores, labels, "auc");
  const std::size_t n = scores.size(), pos = count_bad(labels), neg = n - pos;
  if (pos == 0 || neg == 0) return std::nullopt;
  // Midranks in ascending order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k)
      if (labels[order[k]] == Label::bad) rank_sum += mid;
    i = j + 1;
  }
  const double p = static_cast<double>(pos), q = static_cast<double>(neg);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * q);
}

std::optional<double> ap_instance(std::span<const double> scores, std::span<const Label> labels) {
  check_sizes(scores, labels, "ap");
  const std::size_t pos = count_bad(labels);
  if (pos == 0) return std::nullopt;
  const auto order = rank_descending(scores);
  double hits = 0.0, total = 0.0;
  for (std::size_t r = 0; r < order.size(); ++r) {
    if (labels[order[r]] != Label::bad) continue;
    hits += 1.0;
    total += hits / static_cast<double>(r + 1);
  }
  return total / static_cast<double>(pos);
}

std::optional<double> recall_at_top_k(std::span<const double> scores, std::span<const Label> labels) {
  check_sizes(scores, labels, "recall@k");
  const std::size_t k = count_bad(labels);
  if (k == 0) return std::nullopt;
  const auto order = rank_descending(scores);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < k; ++r) hits += labels[order[r]] == Label::bad;
  return static_cast<double>(hits) / static_cast<double>(k);
}

std::optional<double> acc_at_top1(std::span<const double> scores, std::span<const Label> labels) {
  check_sizes(scores, labels, "acc@1");
  if (scores.empty() || count_bad(labels) == 0) return std::nullopt;
  return labels[rank_descending(scores).front()] == Label::bad ? 1.0 : 0.0;
}

double f1_score(const std::vector<bool>& predicted, const std::vector<bool>& gold) {
  if (predicted.size() != gold.size()) throw DimensionError("f1: prediction and gold lengths differ");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    tp += predicted[i] && gold[i];
    fp += predicted[i] && !gold[i];
    fn += !predicted[i] && gold[i];
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

}  // namespace attriqe::eval
