#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "iclsynth/learners.hpp"
#include "iclsynth/table.hpp"
#include "iclsynth/tensor.hpp"

namespace icls {

// Mixed-type row distance: |delta standardized value| per numeric column,
// 0/1 mismatch per categorical column, summed and divided by the column
// count. Numeric standardization uses the stats passed alongside.
struct DistanceConfig {
    // nothing configurable yet beyond the construction itself
};

// Distance from row `row` of `a` to row `other` of `b` under shared stats.
double mixed_row_distance(const Table& a, std::size_t row, const Table& b, std::size_t other,
                          const ColumnStats& stats);

// Distance to the closest record of `reference`; stats default to
// fit_stats(reference) when not supplied.
double dcr(const Table& single_row, const Table& reference, const ColumnStats& stats);

struct DcrOverfitResult {
    double p = 0.0;      // fraction strictly closer to train than to val
    double score = 0.0;  // min(1, 2(1 - p))
};

// Privacy score over a synthetic table: ties count as "not closer" per the
// strict inequality. Distances standardize numerics with D_train stats.
DcrOverfitResult dcr_overfit(const Table& d_syn, const Table& d_train, const Table& d_val);

// Column-marginal similarity: 1 - KS statistic for numeric columns,
// 1 - total-variation distance for categorical columns, averaged.
double shape(const Table& d_syn, const Table& d_real);

struct TrendResult {
    double value = 1.0;
    std::vector<std::string> skipped_pairs;  // constant-column pairs
};

// Pairwise-association similarity averaged over unordered column pairs:
// numeric-numeric pairs score 1 - |rho_syn - rho_real| / 2 (Pearson); pairs
// involving a categorical column score 1 - TV between normalized
// contingency tables (numeric side quantile-binned on the real column).
TrendResult trend(const Table& d_syn, const Table& d_real);

// Integrated alpha-precision / beta-recall with the k-NN-radius support
// construction in the standardized mixed-distance space.
double ip_alpha(const Table& d_syn, const Table& d_real, std::size_t k = 5);
double ir_beta(const Table& d_syn, const Table& d_real, std::size_t k = 5);

// Arithmetic mean of utility and privacy.
double balanced_score(double utility_value, double dcr_overfit_value);

// z = (x - mu) / sigma within each group; zero-variance and singleton groups
// are dropped and reported.
struct ZScoreResult {
    std::map<std::string, std::vector<double>> groups;  // normalized values
    std::vector<std::string> dropped_groups;
};
ZScoreResult zscore_normalize(const std::map<std::string, std::vector<double>>& groups);

// Pairwise Pearson and Spearman over per-instance metric vectors.
// Unavailable entries (NaN inputs, or fewer than 3 overlapping points) are
// reported as NaN off-diagonal.
struct CorrelationResult {
    std::vector<std::string> names;
    Tensor pearson;   // (m x m)
    Tensor spearman;  // (m x m)
};
CorrelationResult correlation_matrix(const std::vector<std::string>& metric_names,
                                     const std::vector<std::vector<double>>& points);

double pearson_corr(const std::vector<double>& x, const std::vector<double>& y);
double spearman_corr(const std::vector<double>& x, const std::vector<double>& y);

// One evaluated (dataset, method, seed) instance.
struct MetricReport {
    std::string dataset;
    std::string method;
    std::uint64_t seed = 0;
    std::map<std::string, double> values;
    std::set<std::string> unavailable;
    std::vector<std::string> notes;

    std::string to_json_string() const;
    static MetricReport from_json_string(const std::string& text);
};

// Structural validation against the published report schema
// (docs/metric_report.schema.json); throws DataError on violations.
void validate_report_json(const std::string& text);

// Full evaluation of one synthetic table: shape, trend, ip_alpha, ir_beta,
// utility per built-in learner, dcr_overfit (marked unavailable without a
// validation split), and the balanced score.
MetricReport evaluate_tables(const Table& syn, const Table& train, const Table* val,
                             const Table& test, const std::string& dataset,
                             const std::string& method, std::uint64_t seed);

}  // namespace icls
