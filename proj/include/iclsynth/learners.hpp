#pragma once

#include <vector>

#include "iclsynth/table.hpp"

namespace icls {

enum class LearnerKind { BoostedStumps, Linear };

// Area under the ROC curve via the rank statistic, ties handled by average
// ranks. `labels` are 0/1.
double auc_from_scores(const std::vector<int>& labels, const std::vector<double>& scores);

// 1 - SS_res / SS_tot with SS_tot centered on the test mean.
double r2_score(const std::vector<double>& truth, const std::vector<double>& pred);

// Fits the built-in learner on `train_like` and scores it on `test`:
// AUC for categorical targets (macro one-vs-rest beyond two classes),
// R^2 for numeric targets. Throws DataError if a classification training
// set contains a single class.
double utility(const Table& train_like, const Table& test, LearnerKind learner);

struct AugmentationResult {
    double augmented = 0.0;
    double real_only = 0.0;
};

// utility(real_train + syn) alongside the real-only baseline. An empty
// synthetic table reproduces the baseline exactly.
AugmentationResult augmentation_eval(const Table& real_train, const Table& syn,
                                     const Table& test, LearnerKind learner);

}  // namespace icls
