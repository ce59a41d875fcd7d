#include "iclsynth/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace icls {

using nlohmann::json;

double mixed_row_distance(const Table& a, std::size_t row, const Table& b, std::size_t other,
                          const ColumnStats& stats) {
    const std::size_t f_count = a.n_cols();
    double acc = 0.0;
    for (std::size_t f = 0; f < f_count; ++f) {
        if (a.schema.columns[f].kind == ColumnKind::Numeric) {
            const NumericStats& st = stats.numeric[f];
            acc += std::abs(a.cols[f].num[row] - b.cols[f].num[other]) / st.stddev;
        } else {
            acc += a.cols[f].cat[row] == b.cols[f].cat[other] ? 0.0 : 1.0;
        }
    }
    return acc / static_cast<double>(f_count);
}

double dcr(const Table& single_row, const Table& reference, const ColumnStats& stats) {
    if (!(single_row.schema == reference.schema)) throw DataError("dcr: schema mismatch");
    if (reference.n_rows() == 0) throw DataError("dcr: empty reference table");
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < reference.n_rows(); ++r) {
        best = std::min(best, mixed_row_distance(single_row, 0, reference, r, stats));
    }
    return best;
}

DcrOverfitResult dcr_overfit(const Table& d_syn, const Table& d_train, const Table& d_val) {
    if (!(d_syn.schema == d_train.schema) || !(d_syn.schema == d_val.schema)) {
        throw DataError("dcr_overfit: schema mismatch");
    }
    d_syn.validate();
    d_train.validate();
    d_val.validate();
    const ColumnStats stats = fit_stats(d_train);

    std::size_t closer_to_train = 0;
    for (std::size_t s = 0; s < d_syn.n_rows(); ++s) {
        double to_train = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < d_train.n_rows(); ++r) {
            to_train = std::min(to_train, mixed_row_distance(d_syn, s, d_train, r, stats));
        }
        double to_val = std::numeric_limits<double>::infinity();
        for (std::size_t r = 0; r < d_val.n_rows(); ++r) {
            to_val = std::min(to_val, mixed_row_distance(d_syn, s, d_val, r, stats));
        }
        if (to_train < to_val) ++closer_to_train;  // ties are "not closer"
    }
    DcrOverfitResult res;
    res.p = static_cast<double>(closer_to_train) / static_cast<double>(d_syn.n_rows());
    res.score = std::min(1.0, 2.0 * (1.0 - res.p));
    return res;
}

namespace {

// Two-sample Kolmogorov-Smirnov statistic by merge scan.
double ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t i = 0, j = 0;
    double best = 0.0;
    while (i < a.size() && j < b.size()) {
        const double v = std::min(a[i], b[j]);
        while (i < a.size() && a[i] <= v) ++i;
        while (j < b.size() && b[j] <= v) ++j;
        best = std::max(best, std::abs(static_cast<double>(i) / na -
                                       static_cast<double>(j) / nb));
    }
    return best;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) acc += std::abs(p[i] - q[i]);
    return 0.5 * acc;
}

// Quantile bin edges from the real column (interior edges only).
std::vector<double> quantile_edges(std::vector<double> values, std::size_t bins) {
    std::sort(values.begin(), values.end());
    std::vector<double> edges;
    for (std::size_t b = 1; b < bins; ++b) {
        const double q = static_cast<double>(b) / static_cast<double>(bins);
        const double pos = q * static_cast<double>(values.size() - 1);
        const std::size_t lo = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        const double v = lo + 1 < values.size()
                             ? values[lo] * (1.0 - frac) + values[lo + 1] * frac
                             : values[lo];
        edges.push_back(v);
    }
    return edges;
}

std::size_t bin_of(double v, const std::vector<double>& edges) {
    std::size_t b = 0;
    while (b < edges.size() && v > edges[b]) ++b;
    return b;
}

constexpr std::size_t kTrendBins = 5;

// Discrete codes for one column: categorical indices directly, numeric
// values quantile-binned on the real column's edges.
std::vector<int> column_codes(const Table& t, std::size_t f, const std::vector<double>& edges) {
    std::vector<int> codes(t.n_rows());
    if (t.schema.columns[f].kind == ColumnKind::Categorical) {
        codes = t.cols[f].cat;
    } else {
        for (std::size_t r = 0; r < t.n_rows(); ++r) {
            codes[r] = static_cast<int>(bin_of(t.cols[f].num[r], edges));
        }
    }
    return codes;
}

std::size_t column_code_count(const Table& t, std::size_t f) {
    return t.schema.columns[f].kind == ColumnKind::Categorical
               ? t.schema.columns[f].categories.size()
               : kTrendBins;
}

double pearson_of_columns(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0 || syy <= 0.0) return std::numeric_limits<double>::quiet_NaN();
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double shape(const Table& d_syn, const Table& d_real) {
    if (!(d_syn.schema == d_real.schema)) throw DataError("shape: schema mismatch");
    d_syn.validate();
    d_real.validate();
    double acc = 0.0;
    for (std::size_t f = 0; f < d_real.n_cols(); ++f) {
        if (d_real.schema.columns[f].kind == ColumnKind::Numeric) {
            acc += 1.0 - ks_statistic(d_syn.cols[f].num, d_real.cols[f].num);
        } else {
            const std::size_t cats = d_real.schema.columns[f].categories.size();
            std::vector<double> ps(cats, 0.0), qs(cats, 0.0);
            for (int c : d_syn.cols[f].cat) ps[static_cast<std::size_t>(c)] += 1.0;
            for (int c : d_real.cols[f].cat) qs[static_cast<std::size_t>(c)] += 1.0;
            for (double& v : ps) v /= static_cast<double>(d_syn.n_rows());
            for (double& v : qs) v /= static_cast<double>(d_real.n_rows());
            acc += 1.0 - total_variation(ps, qs);
        }
    }
    return acc / static_cast<double>(d_real.n_cols());
}

TrendResult trend(const Table& d_syn, const Table& d_real) {
    if (!(d_syn.schema == d_real.schema)) throw DataError("trend: schema mismatch");
    if (d_real.n_cols() < 2) throw DataError("trend: needs at least two columns");
    d_syn.validate();
    d_real.validate();

    TrendResult res;
    double acc = 0.0;
    std::size_t pairs = 0;
    const std::size_t f_count = d_real.n_cols();

    // Precompute quantile edges for numeric columns on the real side.
    std::vector<std::vector<double>> edges(f_count);
    for (std::size_t f = 0; f < f_count; ++f) {
        if (d_real.schema.columns[f].kind == ColumnKind::Numeric) {
            edges[f] = quantile_edges(d_real.cols[f].num, kTrendBins);
        }
    }

    for (std::size_t a = 0; a < f_count; ++a) {
        for (std::size_t b = a + 1; b < f_count; ++b) {
            const bool num_a = d_real.schema.columns[a].kind == ColumnKind::Numeric;
            const bool num_b = d_real.schema.columns[b].kind == ColumnKind::Numeric;
            if (num_a && num_b) {
                const double rho_real = pearson_of_columns(d_real.cols[a].num, d_real.cols[b].num);
                const double rho_syn = pearson_of_columns(d_syn.cols[a].num, d_syn.cols[b].num);
                if (std::isnan(rho_real) || std::isnan(rho_syn)) {
                    res.skipped_pairs.push_back(d_real.schema.columns[a].name + "/" +
                                                d_real.schema.columns[b].name);
                    continue;
                }
                acc += 1.0 - std::abs(rho_syn - rho_real) / 2.0;
            } else {
                const std::size_t ca = column_code_count(d_real, a);
                const std::size_t cb = column_code_count(d_real, b);
                const auto codes_ra = column_codes(d_real, a, edges[a]);
                const auto codes_rb = column_codes(d_real, b, edges[b]);
                const auto codes_sa = column_codes(d_syn, a, edges[a]);
                const auto codes_sb = column_codes(d_syn, b, edges[b]);
                std::vector<double> pr(ca * cb, 0.0), psyn(ca * cb, 0.0);
                for (std::size_t r = 0; r < d_real.n_rows(); ++r) {
                    pr[static_cast<std::size_t>(codes_ra[r]) * cb +
                       static_cast<std::size_t>(codes_rb[r])] += 1.0;
                }
                for (std::size_t r = 0; r < d_syn.n_rows(); ++r) {
                    psyn[static_cast<std::size_t>(codes_sa[r]) * cb +
                         static_cast<std::size_t>(codes_sb[r])] += 1.0;
                }
                for (double& v : pr) v /= static_cast<double>(d_real.n_rows());
                for (double& v : psyn) v /= static_cast<double>(d_syn.n_rows());
                acc += 1.0 - total_variation(psyn, pr);
            }
            ++pairs;
        }
    }
    if (pairs == 0) throw DataError("trend: no evaluable column pairs");
    res.value = acc / static_cast<double>(pairs);
    return res;
}

namespace {

// k-NN radius of every row within its own set (self excluded).
std::vector<double> knn_radii(const Table& set, std::size_t k, const ColumnStats& stats) {
    const std::size_t n = set.n_rows();
    if (k >= n) throw DataError("alpha/beta support: k must be below the set size");
    std::vector<double> radii(n);
    std::vector<double> dists;
    dists.reserve(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        dists.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dists.push_back(mixed_row_distance(set, i, set, j, stats));
        }
        std::nth_element(dists.begin(), dists.begin() + static_cast<long>(k - 1), dists.end());
        radii[i] = dists[k - 1];
    }
    return radii;
}

// k-NN distance from an outside point to the support set. One exact
// zero-distance match is dropped so that a point coinciding with a support
// row is judged exactly as that row judges itself.
double knn_distance_to(const Table& points, std::size_t row, const Table& support_set,
                       std::size_t k, const ColumnStats& stats) {
    std::vector<double> dists;
    dists.reserve(support_set.n_rows());
    bool dropped_self = false;
    for (std::size_t j = 0; j < support_set.n_rows(); ++j) {
        const double d = mixed_row_distance(points, row, support_set, j, stats);
        if (d == 0.0 && !dropped_self) {
            dropped_self = true;
            continue;
        }
        dists.push_back(d);
    }
    if (dists.size() < k) return 0.0;  // degenerate tiny support
    std::nth_element(dists.begin(), dists.begin() + static_cast<long>(k - 1), dists.end());
    return dists[k - 1];
}

// The level-a support is {x : dist_k(x, set) <= t_a} with t_a the
// ceil(a*N)-th smallest of the set's own k-NN radii, i.e. the k-NN-radius
// support calibrated so the set covers itself at rate a. The integrated
// score is clip(1 - 2 * mean_a |containment - a|, 0, 1).
double integrated_support_score(const Table& support_set, const Table& points, std::size_t k) {
    const ColumnStats stats = fit_stats(support_set);
    std::vector<double> radii = knn_radii(support_set, k, stats);
    std::sort(radii.begin(), radii.end());
    const std::size_t n = radii.size();

    std::vector<double> point_dist(points.n_rows());
    for (std::size_t p = 0; p < points.n_rows(); ++p) {
        point_dist[p] = knn_distance_to(points, p, support_set, k, stats);
    }

    double dev = 0.0;
    std::size_t count = 0;
    for (int grid = 1; grid <= 10; ++grid) {
        const double level = 0.1 * static_cast<double>(grid);
        const std::size_t rank = std::min(
            n - 1, static_cast<std::size_t>(std::ceil(level * static_cast<double>(n))) - 1);
        const double threshold = radii[rank];
        std::size_t inside = 0;
        for (double d : point_dist) inside += d <= threshold ? 1 : 0;
        const double contained =
            static_cast<double>(inside) / static_cast<double>(points.n_rows());
        dev += std::abs(contained - level);
        ++count;
    }
    dev /= static_cast<double>(count);
    return std::clamp(1.0 - 2.0 * dev, 0.0, 1.0);
}

}  // namespace

double ip_alpha(const Table& d_syn, const Table& d_real, std::size_t k) {
    if (!(d_syn.schema == d_real.schema)) throw DataError("ip_alpha: schema mismatch");
    if (d_syn.n_rows() < k + 1 || d_real.n_rows() < k + 1) {
        throw DataError("ip_alpha: both sets need at least k+1 rows");
    }
    return integrated_support_score(d_real, d_syn, k);
}

double ir_beta(const Table& d_syn, const Table& d_real, std::size_t k) {
    if (!(d_syn.schema == d_real.schema)) throw DataError("ir_beta: schema mismatch");
    if (d_syn.n_rows() < k + 1 || d_real.n_rows() < k + 1) {
        throw DataError("ir_beta: both sets need at least k+1 rows");
    }
    return integrated_support_score(d_syn, d_real, k);
}

double balanced_score(double utility_value, double dcr_overfit_value) {
    return 0.5 * utility_value + 0.5 * dcr_overfit_value;
}

ZScoreResult zscore_normalize(const std::map<std::string, std::vector<double>>& groups) {
    ZScoreResult res;
    for (const auto& [name, values] : groups) {
        if (values.size() < 2) {
            res.dropped_groups.push_back(name);
            continue;
        }
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        var /= static_cast<double>(values.size());
        if (var <= 0.0) {
            res.dropped_groups.push_back(name);
            continue;
        }
        const double inv = 1.0 / std::sqrt(var);
        std::vector<double> z(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) z[i] = (values[i] - mean) * inv;
        res.groups.emplace(name, std::move(z));
    }
    return res;
}

double pearson_corr(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return pearson_of_columns(x, y);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> ranks(v.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
        i = j + 1;
    }
    return ranks;
}

}  // namespace

double spearman_corr(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 3) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return pearson_of_columns(average_ranks(x), average_ranks(y));
}

CorrelationResult correlation_matrix(const std::vector<std::string>& metric_names,
                                     const std::vector<std::vector<double>>& points) {
    const std::size_t m = metric_names.size();
    if (points.size() < 3) throw DataError("correlation_matrix: need at least 3 points");
    for (const auto& row : points) {
        if (row.size() != m) throw DataError("correlation_matrix: ragged point row");
    }
    CorrelationResult res;
    res.names = metric_names;
    res.pearson = Tensor({m, m});
    res.spearman = Tensor({m, m});
    for (std::size_t a = 0; a < m; ++a) {
        res.pearson.at(a, a) = 1.0;
        res.spearman.at(a, a) = 1.0;
        for (std::size_t b = a + 1; b < m; ++b) {
            // Pairwise-complete: keep rows where both entries are finite.
            std::vector<double> xa, xb;
            for (const auto& row : points) {
                if (std::isfinite(row[a]) && std::isfinite(row[b])) {
                    xa.push_back(row[a]);
                    xb.push_back(row[b]);
                }
            }
            const double pe = pearson_corr(xa, xb);
            const double sp = spearman_corr(xa, xb);
            res.pearson.at(a, b) = pe;
            res.pearson.at(b, a) = pe;
            res.spearman.at(a, b) = sp;
            res.spearman.at(b, a) = sp;
        }
    }
    return res;
}

std::string MetricReport::to_json_string() const {
    json root;
    root["dataset"] = dataset;
    root["method"] = method;
    root["seed"] = seed;
    json vals = json::object();
    for (const auto& [k, v] : values) vals[k] = v;
    root["values"] = std::move(vals);
    root["unavailable"] = std::vector<std::string>(unavailable.begin(), unavailable.end());
    root["notes"] = notes;
    return root.dump(2);
}

MetricReport MetricReport::from_json_string(const std::string& text) {
    validate_report_json(text);
    const json root = json::parse(text);
    MetricReport rep;
    rep.dataset = root.at("dataset").get<std::string>();
    rep.method = root.at("method").get<std::string>();
    rep.seed = root.at("seed").get<std::uint64_t>();
    for (const auto& [k, v] : root.at("values").items()) {
        rep.values[k] = v.get<double>();
    }
    for (const auto& s : root.at("unavailable")) rep.unavailable.insert(s.get<std::string>());
    for (const auto& s : root.at("notes")) rep.notes.push_back(s.get<std::string>());
    return rep;
}

MetricReport evaluate_tables(const Table& syn, const Table& train, const Table* val,
                             const Table& test, const std::string& dataset,
                             const std::string& method, std::uint64_t seed) {
    MetricReport rep;
    rep.dataset = dataset;
    rep.method = method;
    rep.seed = seed;

    rep.values["shape"] = shape(syn, train);
    const TrendResult tr = trend(syn, train);
    rep.values["trend"] = tr.value;
    for (const std::string& pair : tr.skipped_pairs) {
        rep.notes.push_back("trend: skipped pair " + pair);
    }
    const std::size_t k = 5;
    if (syn.n_rows() > k && train.n_rows() > k) {
        rep.values["ip_alpha"] = ip_alpha(syn, train, k);
        rep.values["ir_beta"] = ir_beta(syn, train, k);
    } else {
        rep.unavailable.insert("ip_alpha");
        rep.unavailable.insert("ir_beta");
    }

    auto try_utility = [&](const char* key, LearnerKind learner) {
        try {
            rep.values[key] = utility(syn, test, learner);
        } catch (const DataError& e) {
            rep.unavailable.insert(key);
            rep.notes.push_back(std::string(key) + ": " + e.what());
        }
    };
    try_utility("utility_stumps", LearnerKind::BoostedStumps);
    try_utility("utility_linear", LearnerKind::Linear);

    if (val != nullptr) {
        const DcrOverfitResult priv = dcr_overfit(syn, train, *val);
        rep.values["dcr_p"] = priv.p;
        rep.values["dcr_overfit"] = priv.score;
    } else {
        rep.unavailable.insert("dcr_overfit");
        rep.notes.push_back("dcr_overfit: no validation split supplied");
    }

    if (rep.values.count("utility_stumps") && rep.values.count("dcr_overfit")) {
        rep.values["balanced_score"] =
            balanced_score(rep.values["utility_stumps"], rep.values["dcr_overfit"]);
    } else {
        rep.unavailable.insert("balanced_score");
    }
    return rep;
}

void validate_report_json(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("report: invalid JSON: ") + e.what());
    }
    auto require = [&](const char* key, bool ok) {
        if (!ok) throw DataError(std::string("report: missing or mistyped field '") + key + "'");
    };
    require("dataset", root.contains("dataset") && root["dataset"].is_string());
    require("method", root.contains("method") && root["method"].is_string());
    require("seed", root.contains("seed") && root["seed"].is_number_unsigned());
    require("values", root.contains("values") && root["values"].is_object());
    for (const auto& [k, v] : root["values"].items()) {
        if (!v.is_number()) {
            throw DataError("report: value '" + k + "' is not numeric");
        }
    }
    require("unavailable", root.contains("unavailable") && root["unavailable"].is_array());
    require("notes", root.contains("notes") && root["notes"].is_array());
}

}  // namespace icls
