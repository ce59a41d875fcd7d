#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "iclsynth/corpus.hpp"
#include "iclsynth/metrics.hpp"
#include "testutil.hpp"

using namespace icls;

namespace {

Table numeric_table(const std::vector<std::vector<double>>& columns,
                    const std::vector<double>& target) {
    Table t;
    for (std::size_t f = 0; f < columns.size(); ++f) {
        t.schema.columns.push_back({"x" + std::to_string(f), ColumnKind::Numeric, {}, false});
    }
    t.schema.columns.push_back({"y", ColumnKind::Numeric, {}, true});
    t.cols.resize(columns.size() + 1);
    for (std::size_t f = 0; f < columns.size(); ++f) t.cols[f].num = columns[f];
    t.cols[columns.size()].num = target;
    return t;
}

Table one_cat_table(const std::vector<int>& values, const std::vector<std::string>& cats) {
    Table t;
    t.schema.columns.push_back({"c", ColumnKind::Categorical, cats, true});
    t.cols.resize(1);
    t.cols[0].cat = values;
    return t;
}

// Brute-force mixed distance for the oracle side of the DCR tests.
double brute_min_distance(const Table& syn, std::size_t row, const Table& ref,
                          const ColumnStats& stats) {
    double best = 1e300;
    for (std::size_t r = 0; r < ref.n_rows(); ++r) {
        double acc = 0.0;
        for (std::size_t f = 0; f < ref.n_cols(); ++f) {
            if (ref.schema.columns[f].kind == ColumnKind::Numeric) {
                acc += std::abs(syn.cols[f].num[row] - ref.cols[f].num[r]) /
                       stats.numeric[f].stddev;
            } else {
                acc += syn.cols[f].cat[row] == ref.cols[f].cat[r] ? 0.0 : 1.0;
            }
        }
        best = std::min(best, acc / static_cast<double>(ref.n_cols()));
    }
    return best;
}

}  // namespace

TEST_CASE("dcr basic cases") {
    // One numeric column with unit std; x = 0 against D = {1, 3} -> 1.
    Table ref = numeric_table({}, {1.0, 3.0});
    // Force unit std through handcrafted stats.
    ColumnStats stats;
    stats.numeric = {{0.0, 1.0}};
    stats.frequencies = {{}};
    Table x = numeric_table({}, {0.0});
    CHECK(dcr(x, ref, stats) == doctest::Approx(1.0));

    // Member of D -> 0.
    Table member = numeric_table({}, {3.0});
    CHECK(dcr(member, ref, stats) == doctest::Approx(0.0));

    // Categorical mismatch rule: x = a vs D = {b, c} -> 1/F = 1.
    Table cref = one_cat_table({1, 2}, {"a", "b", "c"});
    Table cx = one_cat_table({0}, {"a", "b", "c"});
    ColumnStats cstats = fit_stats(cref);
    CHECK(dcr(cx, cref, cstats) == doctest::Approx(1.0));
}

TEST_CASE("dcr_overfit formula and tie rule") {
    // Construct explicit tables: train {0, 10}, val {4, 6}; synthetic points
    // chosen to land strictly closer to train, strictly closer to val, or
    // exactly tied.
    Table train = numeric_table({}, {0.0, 10.0});
    Table val = numeric_table({}, {4.0, 6.0});

    Table syn_train_copy = numeric_table({}, {0.0, 10.0});
    const auto copy_res = dcr_overfit(syn_train_copy, train, val);
    CHECK(copy_res.p == doctest::Approx(1.0));
    CHECK(copy_res.score == doctest::Approx(0.0));

    Table syn_mid = numeric_table({}, {5.0, 4.5});  // closer to val both times
    const auto mid_res = dcr_overfit(syn_mid, train, val);
    CHECK(mid_res.p == doctest::Approx(0.0));
    CHECK(mid_res.score == doctest::Approx(1.0));

    Table syn_tied = numeric_table({}, {2.0, 8.0});  // |2-0|=|2-4|, |8-10|=|8-6|
    const auto tie_res = dcr_overfit(syn_tied, train, val);
    CHECK(tie_res.p == doctest::Approx(0.0));  // ties are "not closer"
    CHECK(tie_res.score == doctest::Approx(1.0));

    // p = 0.5 -> score exactly 1.
    Table syn_half = numeric_table({}, {0.0, 5.0});
    const auto half_res = dcr_overfit(syn_half, train, val);
    CHECK(half_res.p == doctest::Approx(0.5));
    CHECK(half_res.score == doctest::Approx(1.0));

    // DCROverfit(p) spot checks: p in {0, .25, .5, 1} -> {1, 1, 1, 0}.
    auto formula = [](double p) { return std::min(1.0, 2.0 * (1.0 - p)); };
    CHECK(formula(0.0) == 1.0);
    CHECK(formula(0.25) == doctest::Approx(1.0));
    CHECK(formula(0.5) == doctest::Approx(1.0));
    CHECK(formula(1.0) == doctest::Approx(0.0));
}

TEST_CASE("dcr_overfit agrees with brute force on a random mixed table") {
    TaskSpec spec;
    spec.family = TaskFamily::GaussianMixture;
    spec.n_rows = 60;
    spec.n_features = 3;
    spec.seed = 8;
    const GroundTruth truth(spec);
    const Table syn = truth.sample(25, 1);
    const Table train = truth.sample(40, 2);
    const Table val = truth.sample(40, 3);

    const auto res = dcr_overfit(syn, train, val);
    const ColumnStats stats = fit_stats(train);
    std::size_t closer = 0;
    for (std::size_t s = 0; s < syn.n_rows(); ++s) {
        if (brute_min_distance(syn, s, train, stats) < brute_min_distance(syn, s, val, stats)) {
            ++closer;
        }
    }
    CHECK(res.p == doctest::Approx(static_cast<double>(closer) / 25.0));
}

TEST_CASE("dcr_overfit calibration on fresh iid splits") {
    TaskSpec spec;
    spec.family = TaskFamily::GaussianMixture;
    spec.n_rows = 500;
    spec.n_features = 3;
    spec.seed = 21;
    const GroundTruth truth(spec);
    int good = 0;
    for (std::uint64_t trial = 0; trial < 10; ++trial) {
        const Table syn = truth.sample(500, 100 + trial * 3);
        const Table train = truth.sample(500, 101 + trial * 3);
        const Table val = truth.sample(500, 102 + trial * 3);
        const auto res = dcr_overfit(syn, train, val);
        CHECK(res.p > 0.35);
        CHECK(res.p < 0.65);
        if (res.score > 0.9 && res.p > 0.45 && res.p < 0.55) ++good;
    }
    CHECK(good >= 9);
}

TEST_CASE("shape identities and analytic KS value") {
    TaskSpec spec;
    spec.family = TaskFamily::GaussianMixture;
    spec.n_rows = 200;
    spec.n_features = 2;
    spec.seed = 5;
    const Table t = generate_dataset(spec);
    CHECK(shape(t, t) == doctest::Approx(1.0));

    // Disjoint categorical supports -> column score 0.
    Table a = one_cat_table({0, 0, 0}, {"a", "b"});
    Table b = one_cat_table({1, 1, 1}, {"a", "b"});
    CHECK(shape(a, b) == doctest::Approx(0.0));

    // Uniform(0,1) vs Uniform(0.5,1.5): KS = 0.5 analytically.
    Rng rng(12);
    std::vector<double> u1(4000), u2(4000), y(4000);
    for (std::size_t i = 0; i < u1.size(); ++i) {
        u1[i] = rng.uniform();
        u2[i] = 0.5 + rng.uniform();
        y[i] = rng.gaussian();
    }
    const Table syn = numeric_table({u1}, y);
    Table real = numeric_table({u2}, y);
    const double s = shape(syn, real);
    // Column 1 (y) matches itself, column 0 scores 1 - KS = 0.5.
    CHECK(s == doctest::Approx(0.75).epsilon(0.04));

    // Symmetry.
    CHECK(shape(syn, real) == doctest::Approx(shape(real, syn)).epsilon(1e-12));
}

TEST_CASE("trend formula cases") {
    TaskSpec spec;
    spec.family = TaskFamily::GaussianMixture;
    spec.n_rows = 150;
    spec.n_features = 3;
    spec.seed = 15;
    const Table t = generate_dataset(spec);
    CHECK(trend(t, t).value == doctest::Approx(1.0));

    // Perfectly anti-correlated synthetic vs perfectly correlated real.
    Rng rng(3);
    std::vector<double> x(500), pos(500), neg(500), yr(500);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = rng.gaussian();
        pos[i] = 2.0 * x[i] + 1.0;
        neg[i] = -2.0 * x[i] + 3.0;
        yr[i] = rng.gaussian();
    }
    const Table real = numeric_table({x, pos}, yr);
    const Table syn = numeric_table({x, neg}, yr);
    // Pair (x0, x1): |(-1) - 1| / 2 = 1 -> score 0. Pairs with y are noise.
    const auto res = trend(syn, real);
    // The (x0,x1) pair contributes 0; (x0,y) and (x1,y) contribute ~1.
    CHECK(res.value == doctest::Approx(2.0 / 3.0).epsilon(0.05));

    // Independent synthetic vs rho = 0.8 real: pair score ~ 0.6.
    std::vector<double> xr(4000), yr2(4000), xs(4000), ys(4000), tgt(4000);
    for (std::size_t i = 0; i < xr.size(); ++i) {
        xr[i] = rng.gaussian();
        yr2[i] = 0.8 * xr[i] + std::sqrt(1.0 - 0.64) * rng.gaussian();
        xs[i] = rng.gaussian();
        ys[i] = rng.gaussian();
        tgt[i] = rng.gaussian();
    }
    const auto res2 = trend(numeric_table({xs, ys}, tgt), numeric_table({xr, yr2}, tgt));
    // Pairs: (x0,x1) -> 1 - 0.8/2 = 0.6; (x0,y), (x1,y) -> ~1.
    CHECK(res2.value == doctest::Approx((0.6 + 1.0 + 1.0) / 3.0).epsilon(0.03));
}

TEST_CASE("trend skips constant columns with a note") {
    std::vector<double> c(50, 5.0), v(50), y(50);
    Rng rng(8);
    for (std::size_t i = 0; i < v.size(); ++i) {
        v[i] = rng.gaussian();
        y[i] = rng.gaussian();
    }
    // Constant column in the synthetic side only; real side varies. Both
    // pairs touching x0 are skipped, the (x1, y) pair survives.
    const Table real = numeric_table({v, y}, y);
    const Table syn = numeric_table({c, y}, y);
    const auto res = trend(syn, real);
    CHECK(res.skipped_pairs.size() == 2);
    CHECK(res.value > 0.0);
}

TEST_CASE("ip_alpha / ir_beta qualitative behavior") {
    TaskSpec spec;
    spec.family = TaskFamily::GaussianMixture;
    spec.n_rows = 100;
    spec.n_features = 2;
    spec.seed = 31;
    const GroundTruth truth(spec);
    const Table real = truth.sample(100, 1);

    // Self comparison: both near 1.
    CHECK(ip_alpha(real, real, 5) > 0.95);
    CHECK(ir_beta(real, real, 5) > 0.95);

    // Synthetic far outside the support: precision ~ 0.
    Table far = real;
    for (std::size_t f = 0; f < far.n_cols(); ++f) {
        if (far.schema.columns[f].kind == ColumnKind::Numeric) {
            for (double& x : far.cols[f].num) x += 1000.0;
        }
    }
    CHECK(ip_alpha(far, real, 5) < 0.05);

    // Synthetic collapsed to one repeated real row: low recall.
    std::vector<std::size_t> rep(100, 0);
    const Table collapsed = real.select_rows(rep);
    CHECK(ir_beta(collapsed, real, 5) < 0.3);

    CHECK_THROWS_AS(ip_alpha(real, real, 100), DataError);
}

TEST_CASE("utility learners") {
    // Perfectly separable 1-D threshold task -> AUC 1.
    Rng rng(77);
    Table t;
    t.schema.columns.push_back({"x", ColumnKind::Numeric, {}, false});
    t.schema.columns.push_back({"y", ColumnKind::Categorical, {"n", "p"}, true});
    t.cols.resize(2);
    for (int i = 0; i < 200; ++i) {
        const double x = rng.gaussian();
        t.cols[0].num.push_back(x + (i % 2 == 0 ? 3.0 : -3.0));
        t.cols[1].cat.push_back(i % 2 == 0 ? 1 : 0);
    }
    Table test_t = t;
    CHECK(utility(t, test_t, LearnerKind::BoostedStumps) == doctest::Approx(1.0));
    CHECK(utility(t, test_t, LearnerKind::Linear) == doctest::Approx(1.0));

    // Labels independent of features -> AUC ~ 0.5 (permutation-null check).
    Table noise = t;
    for (int i = 0; i < 200; ++i) noise.cols[0].num[static_cast<std::size_t>(i)] = rng.gaussian();
    Table noise_test = noise;
    for (int i = 0; i < 200; ++i) {
        noise_test.cols[0].num[static_cast<std::size_t>(i)] = rng.gaussian();
    }
    const double auc = utility(noise, noise_test, LearnerKind::BoostedStumps);
    CHECK(auc == doctest::Approx(0.5).epsilon(0.12));

    // Single-class training set -> error.
    Table single = t;
    for (auto& c : single.cols[1].cat) c = 1;
    CHECK_THROWS_AS(utility(single, test_t, LearnerKind::BoostedStumps), DataError);

    // Regression: R^2 = 0 when predicting the test mean.
    std::vector<double> truth_y{1.0, 2.0, 3.0};
    std::vector<double> mean_pred{2.0, 2.0, 2.0};
    CHECK(r2_score(truth_y, mean_pred) == doctest::Approx(0.0));

    // AUC is invariant to monotone transforms of scores.
    std::vector<int> labels{0, 1, 0, 1, 1, 0};
    std::vector<double> scores{0.1, 0.9, 0.3, 0.8, 0.55, 0.2};
    std::vector<double> warped(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) warped[i] = std::exp(5.0 * scores[i]);
    CHECK(auc_from_scores(labels, scores) == doctest::Approx(auc_from_scores(labels, warped)));
}

TEST_CASE("boosted stumps learn a regression signal") {
    TaskSpec spec;
    spec.family = TaskFamily::LinearRegression;
    spec.n_rows = 400;
    spec.n_features = 3;
    spec.seed = 4;
    spec.noise = 0.1;
    const GroundTruth truth(spec);
    const Table train = truth.sample(400, 1);
    const Table test_t = truth.sample(400, 2);
    CHECK(utility(train, test_t, LearnerKind::BoostedStumps) > 0.5);
    CHECK(utility(train, test_t, LearnerKind::Linear) > 0.9);  // exactly linear task
}

TEST_CASE("augmentation_eval contract") {
    TaskSpec spec;
    spec.family = TaskFamily::GaussianMixture;
    spec.n_rows = 100;
    spec.n_features = 2;
    spec.seed = 14;
    const GroundTruth truth(spec);
    const Table train = truth.sample(100, 1);
    const Table test_t = truth.sample(400, 2);

    Table empty;
    empty.schema = train.schema;
    empty.cols.resize(train.n_cols());
    const auto res = augmentation_eval(train, empty, test_t, LearnerKind::BoostedStumps);
    CHECK(res.augmented == res.real_only);

    const Table oracle_syn = truth.sample(400, 3);
    const auto res2 = augmentation_eval(train, oracle_syn, test_t, LearnerKind::BoostedStumps);
    CHECK(res2.real_only == res.real_only);
    CHECK(res2.augmented >= res2.real_only - 0.05);
}

TEST_CASE("zscore_normalize population convention") {
    std::map<std::string, std::vector<double>> groups;
    groups["a"] = {1.0, 2.0, 3.0};
    groups["singleton"] = {4.0};
    groups["constant"] = {2.0, 2.0, 2.0};
    const auto res = zscore_normalize(groups);
    REQUIRE(res.groups.count("a") == 1);
    const auto& z = res.groups.at("a");
    CHECK(z[0] == doctest::Approx(-1.224744871).epsilon(1e-8));
    CHECK(z[1] == doctest::Approx(0.0));
    CHECK(z[2] == doctest::Approx(1.224744871).epsilon(1e-8));
    double mean = 0.0, var = 0.0;
    for (double v : z) mean += v;
    mean /= 3.0;
    for (double v : z) var += (v - mean) * (v - mean);
    var /= 3.0;
    CHECK(std::abs(mean) < 1e-10);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(res.dropped_groups.size() == 2);
}

TEST_CASE("correlation matrix on planted relations") {
    // y = 2x + 1 -> Pearson and Spearman exactly 1.
    std::vector<std::vector<double>> pts;
    for (int i = -2; i <= 2; ++i) {
        const double x = static_cast<double>(i);
        pts.push_back({x, 2.0 * x + 1.0, x * x * x});
    }
    const auto res = correlation_matrix({"x", "affine", "cubic"}, pts);
    CHECK(res.pearson.at(0, 0) == 1.0);
    CHECK(res.pearson.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.spearman.at(0, 1) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.spearman.at(0, 2) == doctest::Approx(1.0).epsilon(1e-12));

    // Oracle for Pearson(x, x^3) on {-2..2}: direct formula evaluation.
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (int i = -2; i <= 2; ++i) {
        const double x = i, y = static_cast<double>(i * i * i);
        sxy += x * y;
        sxx += x * x;
        syy += y * y;
    }
    const double rho = sxy / std::sqrt(sxx * syy);
    CHECK(res.pearson.at(0, 2) == doctest::Approx(rho).epsilon(1e-10));
    // Symmetry.
    CHECK(res.pearson.at(2, 0) == res.pearson.at(0, 2));

    CHECK_THROWS_AS(correlation_matrix({"a"}, {{1.0}, {2.0}}), DataError);
}

TEST_CASE("balanced_score") {
    CHECK(balanced_score(0.8, 0.6) == doctest::Approx(0.7));
    CHECK(balanced_score(0.33, 0.33) == doctest::Approx(0.33));

    // Argmax over a list equals a brute-force scan, and is invariant to a
    // joint affine rescale with equal slope.
    Rng rng(5);
    std::vector<std::pair<double, double>> entries;
    for (int i = 0; i < 50; ++i) entries.push_back({rng.uniform(), rng.uniform()});
    std::size_t best = 0, best_scaled = 0;
    for (std::size_t i = 1; i < entries.size(); ++i) {
        if (balanced_score(entries[i].first, entries[i].second) >
            balanced_score(entries[best].first, entries[best].second)) {
            best = i;
        }
        const auto scaled = [&](std::size_t j) {
            return balanced_score(3.0 * entries[j].first + 1.0, 3.0 * entries[j].second + 1.0);
        };
        if (scaled(i) > scaled(best_scaled)) best_scaled = i;
    }
    CHECK(best == best_scaled);
}

TEST_CASE("metric report json round trip and validation") {
    MetricReport rep;
    rep.dataset = "toy";
    rep.method = "desk";
    rep.seed = 3;
    rep.values["shape"] = 0.91;
    rep.values["dcr_overfit"] = 0.85;
    rep.unavailable.insert("ir_beta");
    rep.notes.push_back("trend: skipped pair x0/x1");

    const std::string text = rep.to_json_string();
    CHECK_NOTHROW(validate_report_json(text));
    const MetricReport back = MetricReport::from_json_string(text);
    CHECK(back.dataset == "toy");
    CHECK(back.values.at("shape") == doctest::Approx(0.91));
    CHECK(back.unavailable.count("ir_beta") == 1);

    CHECK_THROWS_AS(validate_report_json("{\"dataset\": 3}"), DataError);
    CHECK_THROWS_AS(validate_report_json("not json"), DataError);
}
