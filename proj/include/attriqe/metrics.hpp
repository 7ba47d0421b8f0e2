#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "attriqe/corpus.hpp"

namespace attriqe::eval {

using corpus::Label;

// Per-instance ranking metrics over oriented scores (higher = more likely an
// error). Each returns nullopt when the instance is not evaluable: AUC needs
// both classes, the others need at least one BAD word. Ties: AUC uses
// midranks; argsort-based metrics break ties by the lower position.
std::optional<double> auc_instance(std::span<const double> scores, std::span<const Label> labels);
std::optional<double> ap_instance(std::span<const double> scores, std::span<const Label> labels);
std::optional<double> recall_at_top_k(std::span<const double> scores, std::span<const Label> labels);
std::optional<double> acc_at_top1(std::span<const double> scores, std::span<const Label> labels);

// Indices sorted by descending score, equal scores in ascending index order.
std::vector<std::size_t> rank_descending(std::span<const double> scores);

// Binary F1 of the positive class; 0 when there are no predicted or gold positives.
double f1_score(const std::vector<bool>& predicted, const std::vector<bool>& gold);

}  // namespace attriqe::eval
