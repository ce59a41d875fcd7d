#include "iclsynth/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "iclsynth/kernels.hpp"
#include "iclsynth/linalg.hpp"
#include "iclsynth/tensor.hpp"

namespace icls {
namespace {

constexpr std::size_t kBoostRounds = 100;
constexpr double kBoostLr = 0.1;
constexpr double kRidgeLambda = 1e-3;

// Numeric columns standardized with training stats, categorical columns
// one-hot encoded. The target column is excluded.
struct Design {
    std::vector<std::vector<double>> x;  // column-major features
    std::size_t n_rows = 0;
};

struct FeatureCodec {
    TableSchema schema;
    std::size_t target = 0;
    std::vector<NumericStats> numeric;  // training stats per source column

    Design encode(const Table& t) const {
        Design d;
        d.n_rows = t.n_rows();
        for (std::size_t f = 0; f < schema.columns.size(); ++f) {
            if (f == target) continue;
            const ColumnSpec& spec = schema.columns[f];
            if (spec.kind == ColumnKind::Numeric) {
                std::vector<double> col(d.n_rows);
                const NumericStats& st = numeric[f];
                for (std::size_t r = 0; r < d.n_rows; ++r) {
                    col[r] = (t.cols[f].num[r] - st.mean) / st.stddev;
                }
                d.x.push_back(std::move(col));
            } else {
                for (std::size_t c = 0; c < spec.categories.size(); ++c) {
                    std::vector<double> col(d.n_rows);
                    for (std::size_t r = 0; r < d.n_rows; ++r) {
                        col[r] = t.cols[f].cat[r] == static_cast<int>(c) ? 1.0 : 0.0;
                    }
                    d.x.push_back(std::move(col));
                }
            }
        }
        return d;
    }
};

FeatureCodec make_codec(const Table& train) {
    FeatureCodec codec;
    codec.schema = train.schema;
    codec.target = train.schema.target_index();
    codec.numeric.resize(train.n_cols());
    const std::size_t n = train.n_rows();
    for (std::size_t f = 0; f < train.n_cols(); ++f) {
        if (train.schema.columns[f].kind != ColumnKind::Numeric || f == codec.target) continue;
        double mean = 0.0;
        for (double v : train.cols[f].num) mean += v;
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (double v : train.cols[f].num) var += (v - mean) * (v - mean);
        var /= static_cast<double>(n);
        // Constant feature columns degrade to zero after centering.
        codec.numeric[f] = {mean, var > 0.0 ? std::sqrt(var) : 1.0};
    }
    return codec;
}

struct Stump {
    std::size_t feature = 0;
    double threshold = 0.0;
    double left = 0.0;
    double right = 0.0;

    double predict(const Design& d, std::size_t row) const {
        return d.x[feature][row] <= threshold ? left : right;
    }
};

// Pre-sorted row orders per feature; reused across boosting rounds.
std::vector<std::vector<std::size_t>> sort_features(const Design& d) {
    std::vector<std::vector<std::size_t>> orders(d.x.size());
    for (std::size_t j = 0; j < d.x.size(); ++j) {
        orders[j].resize(d.n_rows);
        std::iota(orders[j].begin(), orders[j].end(), std::size_t{0});
        const auto& col = d.x[j];
        std::stable_sort(orders[j].begin(), orders[j].end(),
                         [&](std::size_t a, std::size_t b) { return col[a] < col[b]; });
    }
    return orders;
}

// Least-squares stump on residuals: maximizes S_L^2/n_L + S_R^2/n_R over all
// split points of all features.
bool fit_stump(const Design& d, const std::vector<std::vector<std::size_t>>& orders,
               const std::vector<double>& residual, Stump* out) {
    double total = 0.0;
    for (double r : residual) total += r;
    double best_gain = -1.0;
    for (std::size_t j = 0; j < d.x.size(); ++j) {
        const auto& col = d.x[j];
        const auto& order = orders[j];
        double left_sum = 0.0;
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            left_sum += residual[order[i]];
            if (col[order[i]] == col[order[i + 1]]) continue;
            const double n_l = static_cast<double>(i + 1);
            const double n_r = static_cast<double>(order.size() - i - 1);
            const double right_sum = total - left_sum;
            const double gain = left_sum * left_sum / n_l + right_sum * right_sum / n_r;
            if (gain > best_gain) {
                best_gain = gain;
                out->feature = j;
                out->threshold = 0.5 * (col[order[i]] + col[order[i + 1]]);
                out->left = left_sum / n_l;
                out->right = right_sum / n_r;
            }
        }
    }
    return best_gain >= 0.0;
}

std::vector<double> boost_regression(const Design& train, const std::vector<double>& y,
                                     const Design& test) {
    const auto orders = sort_features(train);
    double base = 0.0;
    for (double v : y) base += v;
    base /= static_cast<double>(y.size());

    std::vector<Stump> stumps;
    std::vector<double> fit(y.size(), base);
    std::vector<double> residual(y.size());
    for (std::size_t round = 0; round < kBoostRounds; ++round) {
        for (std::size_t i = 0; i < y.size(); ++i) residual[i] = y[i] - fit[i];
        Stump s;
        if (!fit_stump(train, orders, residual, &s)) break;
        stumps.push_back(s);
        for (std::size_t i = 0; i < y.size(); ++i) fit[i] += kBoostLr * s.predict(train, i);
    }
    std::vector<double> pred(test.n_rows, base);
    for (const Stump& s : stumps) {
        for (std::size_t i = 0; i < test.n_rows; ++i) pred[i] += kBoostLr * s.predict(test, i);
    }
    return pred;
}

// Binary logistic boosting; returns test logits.
std::vector<double> boost_logistic(const Design& train, const std::vector<int>& y,
                                   const Design& test) {
    const auto orders = sort_features(train);
    std::vector<double> logits(y.size(), 0.0);
    std::vector<double> residual(y.size());
    struct NewtonStump {
        Stump split;
        double left = 0.0, right = 0.0;
    };
    std::vector<NewtonStump> stumps;
    for (std::size_t round = 0; round < kBoostRounds; ++round) {
        double num_l = 0.0, den_l = 0.0, num_r = 0.0, den_r = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-logits[i]));
            residual[i] = static_cast<double>(y[i]) - p;
        }
        Stump s;
        if (!fit_stump(train, orders, residual, &s)) break;
        // Newton leaf values: sum(r) / sum(p(1-p)) per side.
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-logits[i]));
            const double h = std::max(p * (1.0 - p), 1e-6);
            if (train.x[s.feature][i] <= s.threshold) {
                num_l += residual[i];
                den_l += h;
            } else {
                num_r += residual[i];
                den_r += h;
            }
        }
        NewtonStump ns;
        ns.split = s;
        ns.left = den_l > 0.0 ? num_l / den_l : 0.0;
        ns.right = den_r > 0.0 ? num_r / den_r : 0.0;
        stumps.push_back(ns);
        for (std::size_t i = 0; i < y.size(); ++i) {
            const bool left = train.x[ns.split.feature][i] <= ns.split.threshold;
            logits[i] += kBoostLr * (left ? ns.left : ns.right);
        }
    }
    std::vector<double> pred(test.n_rows, 0.0);
    for (const NewtonStump& ns : stumps) {
        for (std::size_t i = 0; i < test.n_rows; ++i) {
            const bool left = test.x[ns.split.feature][i] <= ns.split.threshold;
            pred[i] += kBoostLr * (left ? ns.left : ns.right);
        }
    }
    return pred;
}

Tensor design_matrix_with_bias(const Design& d) {
    const std::size_t p = d.x.size() + 1;
    Tensor x({d.n_rows, p});
    for (std::size_t r = 0; r < d.n_rows; ++r) {
        for (std::size_t j = 0; j < d.x.size(); ++j) x.at(r, j) = d.x[j][r];
        x.at(r, p - 1) = 1.0;
    }
    return x;
}

std::vector<double> ridge_regression(const Design& train, const std::vector<double>& y,
                                     const Design& test) {
    Tensor x = design_matrix_with_bias(train);
    const std::size_t p = x.dim(1);
    Tensor xtx({p, p});
    kern::active().matmul_at_b_acc(xtx.data(), x.data(), x.data(), train.n_rows, p, p);
    for (std::size_t j = 0; j < p; ++j) xtx.at(j, j) += kRidgeLambda;
    Tensor xty({p});
    for (std::size_t r = 0; r < train.n_rows; ++r) {
        for (std::size_t j = 0; j < p; ++j) xty[j] += x.at(r, j) * y[r];
    }
    Tensor beta = solve_spd(xtx, xty);
    Tensor xt = design_matrix_with_bias(test);
    std::vector<double> pred(test.n_rows, 0.0);
    for (std::size_t r = 0; r < test.n_rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p; ++j) acc += xt.at(r, j) * beta[j];
        pred[r] = acc;
    }
    return pred;
}

std::vector<double> ridge_logistic(const Design& train, const std::vector<int>& y,
                                   const Design& test) {
    Tensor x = design_matrix_with_bias(train);
    const std::size_t n = x.dim(0), p = x.dim(1);
    Tensor beta({p});
    // IRLS with a ridge penalty.
    for (int iter = 0; iter < 25; ++iter) {
        std::vector<double> prob(n), w(n);
        for (std::size_t r = 0; r < n; ++r) {
            double acc = 0.0;
            for (std::size_t j = 0; j < p; ++j) acc += x.at(r, j) * beta[j];
            prob[r] = 1.0 / (1.0 + std::exp(-acc));
            w[r] = std::max(prob[r] * (1.0 - prob[r]), 1e-6);
        }
        Tensor h({p, p});
        Tensor grad({p});
        for (std::size_t r = 0; r < n; ++r) {
            const double err = static_cast<double>(y[r]) - prob[r];
            for (std::size_t j = 0; j < p; ++j) {
                grad[j] += x.at(r, j) * err;
                for (std::size_t k = 0; k <= j; ++k) h.at(j, k) += w[r] * x.at(r, j) * x.at(r, k);
            }
        }
        for (std::size_t j = 0; j < p; ++j) {
            for (std::size_t k = j + 1; k < p; ++k) h.at(j, k) = h.at(k, j);
            h.at(j, j) += kRidgeLambda;
            grad[j] -= kRidgeLambda * beta[j];
        }
        Tensor delta = solve_spd(h, grad);
        double step_norm = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            beta[j] += delta[j];
            step_norm += delta[j] * delta[j];
        }
        if (step_norm < 1e-12) break;
    }
    Tensor xt = design_matrix_with_bias(test);
    std::vector<double> pred(test.n_rows, 0.0);
    for (std::size_t r = 0; r < test.n_rows; ++r) {
        double acc = 0.0;
        for (std::size_t j = 0; j < p; ++j) acc += xt.at(r, j) * beta[j];
        pred[r] = acc;
    }
    return pred;
}

}  // namespace

double auc_from_scores(const std::vector<int>& labels, const std::vector<double>& scores) {
    if (labels.size() != scores.size() || labels.empty()) {
        throw DataError("auc: labels/scores size mismatch");
    }
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(labels.size(), 0.0);
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;  // 1-based
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = avg_rank;
        i = j + 1;
    }
    double pos_rank_sum = 0.0;
    std::size_t n_pos = 0;
    for (std::size_t k = 0; k < labels.size(); ++k) {
        if (labels[k] == 1) {
            pos_rank_sum += rank[k];
            ++n_pos;
        }
    }
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw DataError("auc: needs both classes in the test set");
    return (pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1)) /
           (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double r2_score(const std::vector<double>& truth, const std::vector<double>& pred) {
    if (truth.size() != pred.size() || truth.empty()) {
        throw DataError("r2: size mismatch");
    }
    double mean = 0.0;
    for (double v : truth) mean += v;
    mean /= static_cast<double>(truth.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        ss_res += (truth[i] - pred[i]) * (truth[i] - pred[i]);
        ss_tot += (truth[i] - mean) * (truth[i] - mean);
    }
    if (ss_tot <= 0.0) throw DataError("r2: constant test target");
    return 1.0 - ss_res / ss_tot;
}

double utility(const Table& train_like, const Table& test, LearnerKind learner) {
    train_like.validate();
    test.validate();
    if (!(train_like.schema == test.schema)) throw DataError("utility: schema mismatch");
    const std::size_t target = train_like.schema.target_index();
    const ColumnSpec& tspec = train_like.schema.columns[target];

    FeatureCodec codec = make_codec(train_like);
    const Design dtrain = codec.encode(train_like);
    const Design dtest = codec.encode(test);

    if (tspec.kind == ColumnKind::Numeric) {
        const std::vector<double>& y = train_like.cols[target].num;
        std::vector<double> pred = learner == LearnerKind::BoostedStumps
                                       ? boost_regression(dtrain, y, dtest)
                                       : ridge_regression(dtrain, y, dtest);
        return r2_score(test.cols[target].num, pred);
    }

    // Classification: binary directly, macro one-vs-rest otherwise.
    const std::vector<int>& y = train_like.cols[target].cat;
    std::vector<int> present(tspec.categories.size(), 0);
    for (int c : y) present[static_cast<std::size_t>(c)] = 1;
    const int n_present = std::accumulate(present.begin(), present.end(), 0);
    if (n_present < 2) {
        throw DataError("utility: classification training set has a single class");
    }

    auto binary_auc = [&](int positive) -> double {
        std::vector<int> ytr(y.size());
        for (std::size_t i = 0; i < y.size(); ++i) ytr[i] = y[i] == positive ? 1 : 0;
        std::vector<double> scores = learner == LearnerKind::BoostedStumps
                                         ? boost_logistic(dtrain, ytr, dtest)
                                         : ridge_logistic(dtrain, ytr, dtest);
        std::vector<int> yte(test.cols[target].cat.size());
        for (std::size_t i = 0; i < yte.size(); ++i) {
            yte[i] = test.cols[target].cat[i] == positive ? 1 : 0;
        }
        return auc_from_scores(yte, scores);
    };

    if (tspec.categories.size() == 2) return binary_auc(1);

    double acc = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < tspec.categories.size(); ++c) {
        if (present[c] == 0) continue;
        bool test_has_both = false;
        {
            std::size_t pos = 0;
            for (int v : test.cols[target].cat) pos += v == static_cast<int>(c) ? 1 : 0;
            test_has_both = pos > 0 && pos < test.cols[target].cat.size();
        }
        if (!test_has_both) continue;
        acc += binary_auc(static_cast<int>(c));
        ++counted;
    }
    if (counted == 0) throw DataError("utility: no class evaluable on the test set");
    return acc / static_cast<double>(counted);
}

AugmentationResult augmentation_eval(const Table& real_train, const Table& syn,
                                     const Table& test, LearnerKind learner) {
    AugmentationResult res;
    res.real_only = utility(real_train, test, learner);
    if (syn.n_rows() == 0) {
        res.augmented = res.real_only;
        return res;
    }
    res.augmented = utility(Table::concat_rows(real_train, syn), test, learner);
    return res;
}

}  // namespace icls
