#pragma once

#include "nsreg/types.hpp"

#include <vector>

namespace nsreg {

/// AUC-ROC by rank statistics: P(score_a > score_n) + half the tie mass.
/// Requires both classes present.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

/// Average precision over descending unique score thresholds; equal scores
/// form one threshold block. Requires at least one positive.
double auc_pr(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace nsreg
