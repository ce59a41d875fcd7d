#include "iclsynth/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace icls {

using nlohmann::json;

std::string family_name(TaskFamily f) {
    switch (f) {
        case TaskFamily::GaussianMixture: return "gaussian_mixture";
        case TaskFamily::LinearRegression: return "linear_regression";
        case TaskFamily::CategoricalMixture: return "categorical_mixture";
        case TaskFamily::TwoMoonsLike: return "two_moons_like";
    }
    throw DataError("family_name: unknown family");
}

TaskFamily family_from_name(const std::string& name) {
    if (name == "gaussian_mixture") return TaskFamily::GaussianMixture;
    if (name == "linear_regression") return TaskFamily::LinearRegression;
    if (name == "categorical_mixture") return TaskFamily::CategoricalMixture;
    if (name == "two_moons_like") return TaskFamily::TwoMoonsLike;
    throw DataError("unknown task family '" + name + "'");
}

void TaskSpec::validate() const {
    if (n_rows < 50 || n_rows > 2000) {
        throw DataError("task spec: n_rows " + std::to_string(n_rows) +
                        " outside [50, 2000]");
    }
    if (n_features < 2 || n_features > 50) {
        throw DataError("task spec: n_features " + std::to_string(n_features) +
                        " outside [2, 50]");
    }
    if (components < 1) throw DataError("task spec: components must be >= 1");
    if (categories < 2) throw DataError("task spec: categories must be >= 2");
    if (family == TaskFamily::TwoMoonsLike && n_features < 2) {
        throw DataError("task spec: two_moons_like needs >= 2 features");
    }
    if (!(noise > 0.0)) throw DataError("task spec: noise must be positive");
}

namespace {

std::vector<std::string> index_labels(const char* prefix, std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i));
    return out;
}

}  // namespace

GroundTruth::GroundTruth(const TaskSpec& spec) : spec_(spec) {
    spec.validate();
    Rng rng(mix_key(spec.seed, 0x7061726dULL));  // parameter stream
    const std::size_t f_count = spec.n_features;
    const std::size_t k = spec.components;

    switch (spec.family) {
        case TaskFamily::GaussianMixture: {
            const double spread = spec.noise / 0.1;
            weights_.resize(k);
            double wsum = 0.0;
            for (double& w : weights_) {
                w = rng.uniform(0.5, 1.5);
                wsum += w;
            }
            for (double& w : weights_) w /= wsum;
            means_.assign(k, std::vector<double>(f_count));
            stddevs_.assign(k, std::vector<double>(f_count));
            for (std::size_t c = 0; c < k; ++c) {
                for (std::size_t f = 0; f < f_count; ++f) {
                    means_[c][f] = 2.0 * rng.gaussian();
                    stddevs_[c][f] = spread * rng.uniform(0.4, 1.1);
                }
            }
            feature_means_.assign(f_count, 0.0);
            feature_stddevs_.assign(f_count, 0.0);
            for (std::size_t f = 0; f < f_count; ++f) {
                double m = 0.0, second = 0.0;
                for (std::size_t c = 0; c < k; ++c) {
                    m += weights_[c] * means_[c][f];
                    second += weights_[c] *
                              (stddevs_[c][f] * stddevs_[c][f] + means_[c][f] * means_[c][f]);
                }
                feature_means_[f] = m;
                feature_stddevs_[f] = std::sqrt(second - m * m);
            }
            for (std::size_t f = 0; f < f_count; ++f) {
                schema_.columns.push_back({"x" + std::to_string(f), ColumnKind::Numeric, {}, false});
            }
            // The label space lists >= 2 categories even for a
            // single-component mixture (the extra label is simply unused).
            schema_.columns.push_back({"label", ColumnKind::Categorical,
                                       index_labels("c", std::max<std::size_t>(k, 2)), true});
            break;
        }
        case TaskFamily::LinearRegression: {
            lin_weights_.resize(f_count);
            const double ws = 1.0 / std::sqrt(static_cast<double>(f_count));
            for (double& w : lin_weights_) w = ws * rng.gaussian();
            lin_bias_ = 0.5 * rng.gaussian();
            for (std::size_t f = 0; f < f_count; ++f) {
                schema_.columns.push_back({"x" + std::to_string(f), ColumnKind::Numeric, {}, false});
            }
            schema_.columns.push_back({"y", ColumnKind::Numeric, {}, true});
            break;
        }
        case TaskFamily::CategoricalMixture: {
            weights_.resize(k);
            double wsum = 0.0;
            for (double& w : weights_) {
                w = rng.uniform(0.5, 1.5);
                wsum += w;
            }
            for (double& w : weights_) w /= wsum;
            cat_probs_.assign(k, std::vector<std::vector<double>>(
                                     f_count, std::vector<double>(spec.categories)));
            for (std::size_t c = 0; c < k; ++c) {
                for (std::size_t f = 0; f < f_count; ++f) {
                    double psum = 0.0;
                    for (double& p : cat_probs_[c][f]) {
                        p = rng.uniform(0.2, 1.0);
                        psum += p;
                    }
                    for (double& p : cat_probs_[c][f]) p /= psum;
                }
            }
            for (std::size_t f = 0; f < f_count; ++f) {
                schema_.columns.push_back({"x" + std::to_string(f), ColumnKind::Categorical,
                                           index_labels("v", spec.categories), false});
            }
            schema_.columns.push_back({"label", ColumnKind::Categorical,
                                       index_labels("c", std::max<std::size_t>(k, 2)), true});
            break;
        }
        case TaskFamily::TwoMoonsLike: {
            for (std::size_t f = 0; f < f_count; ++f) {
                schema_.columns.push_back({"x" + std::to_string(f), ColumnKind::Numeric, {}, false});
            }
            schema_.columns.push_back(
                {"label", ColumnKind::Categorical, index_labels("c", 2), true});
            break;
        }
    }
    schema_.validate();
}

Table GroundTruth::sample(std::size_t n, std::uint64_t draw_seed) const {
    Rng rng(mix_key(spec_.seed, 0x64726177ULL, draw_seed));
    const std::size_t f_count = spec_.n_features;
    Table t;
    t.schema = schema_;
    t.cols.resize(schema_.columns.size());

    auto pick_component = [&](const std::vector<double>& weights) {
        const double u = rng.uniform();
        double acc = 0.0;
        for (std::size_t c = 0; c < weights.size(); ++c) {
            acc += weights[c];
            if (u < acc) return c;
        }
        return weights.size() - 1;
    };

    for (std::size_t r = 0; r < n; ++r) {
        switch (spec_.family) {
            case TaskFamily::GaussianMixture: {
                const std::size_t c = pick_component(weights_);
                for (std::size_t f = 0; f < f_count; ++f) {
                    t.cols[f].num.push_back(means_[c][f] + stddevs_[c][f] * rng.gaussian());
                }
                t.cols[f_count].cat.push_back(static_cast<int>(c));
                break;
            }
            case TaskFamily::LinearRegression: {
                double y = lin_bias_;
                for (std::size_t f = 0; f < f_count; ++f) {
                    const double x = rng.gaussian();
                    t.cols[f].num.push_back(x);
                    y += lin_weights_[f] * x;
                }
                t.cols[f_count].num.push_back(y + spec_.noise * rng.gaussian());
                break;
            }
            case TaskFamily::CategoricalMixture: {
                const std::size_t c = pick_component(weights_);
                for (std::size_t f = 0; f < f_count; ++f) {
                    const double u = rng.uniform();
                    double acc = 0.0;
                    int chosen = static_cast<int>(spec_.categories) - 1;
                    for (std::size_t v = 0; v < spec_.categories; ++v) {
                        acc += cat_probs_[c][f][v];
                        if (u < acc) {
                            chosen = static_cast<int>(v);
                            break;
                        }
                    }
                    t.cols[f].cat.push_back(chosen);
                }
                t.cols[f_count].cat.push_back(static_cast<int>(c));
                break;
            }
            case TaskFamily::TwoMoonsLike: {
                const int moon = rng.uniform() < 0.5 ? 0 : 1;
                const double theta = rng.uniform(0.0, 3.14159265358979323846);
                double x0, x1;
                if (moon == 0) {
                    x0 = std::cos(theta);
                    x1 = std::sin(theta);
                } else {
                    x0 = 1.0 - std::cos(theta);
                    x1 = 0.5 - std::sin(theta);
                }
                t.cols[0].num.push_back(x0 + spec_.noise * rng.gaussian());
                t.cols[1].num.push_back(x1 + spec_.noise * rng.gaussian());
                for (std::size_t f = 2; f < f_count; ++f) {
                    t.cols[f].num.push_back(rng.gaussian());
                }
                t.cols[f_count].cat.push_back(moon);
                break;
            }
        }
    }
    return t;
}

Table generate_dataset(const TaskSpec& spec) {
    GroundTruth truth(spec);
    return truth.sample(spec.n_rows, 0);
}

std::vector<Table> permutation_variants(const Table& table, std::size_t k, std::uint64_t seed) {
    if (k < 1) throw DataError("permutation_variants: k must be >= 1");
    table.validate();
    const std::size_t n = table.n_rows();
    const std::size_t target = table.schema.target_index();

    std::vector<Table> variants;
    variants.reserve(k);
    for (std::size_t v = 0; v < k; ++v) {
        Rng rng(mix_key(seed, v, 0x7065726dULL));
        std::vector<std::size_t> row_order(n);
        for (std::size_t i = 0; i < n; ++i) row_order[i] = i;
        rng.shuffle(row_order);

        std::vector<std::size_t> feature_cols;
        for (std::size_t f = 0; f < table.n_cols(); ++f) {
            if (f != target) feature_cols.push_back(f);
        }
        rng.shuffle(feature_cols);

        // Reassemble with the target column fixed in place.
        std::vector<std::size_t> col_order;
        std::size_t next_feature = 0;
        for (std::size_t f = 0; f < table.n_cols(); ++f) {
            col_order.push_back(f == target ? target : feature_cols[next_feature++]);
        }

        Table out;
        out.schema.columns.reserve(table.n_cols());
        out.cols.resize(table.n_cols());
        for (std::size_t f = 0; f < table.n_cols(); ++f) {
            const std::size_t src = col_order[f];
            out.schema.columns.push_back(table.schema.columns[src]);
            const ColumnSpec& spec = table.schema.columns[src];
            if (spec.kind == ColumnKind::Numeric) {
                out.cols[f].num.reserve(n);
                for (std::size_t i : row_order) out.cols[f].num.push_back(table.cols[src].num[i]);
            } else {
                out.cols[f].cat.reserve(n);
                for (std::size_t i : row_order) out.cols[f].cat.push_back(table.cols[src].cat[i]);
            }
        }
        variants.push_back(std::move(out));
    }
    return variants;
}

std::pair<Table, Table> split_context_query(const Table& table, const SplitSpec& split) {
    table.validate();
    const std::size_t n = table.n_rows();
    const std::size_t m_ctx = static_cast<std::size_t>(
        std::floor(split.context_ratio * static_cast<double>(n)));
    if (m_ctx < 1 || n - m_ctx < 1) {
        throw DataError("split_context_query: ratio " + std::to_string(split.context_ratio) +
                        " leaves an empty side for N=" + std::to_string(n));
    }
    Rng rng(mix_key(split.seed, 0x73706c74ULL));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    std::vector<std::size_t> ctx_idx(order.begin(), order.begin() + static_cast<long>(m_ctx));
    std::vector<std::size_t> qry_idx(order.begin() + static_cast<long>(m_ctx), order.end());
    std::sort(ctx_idx.begin(), ctx_idx.end());
    std::sort(qry_idx.begin(), qry_idx.end());
    return {table.select_rows(ctx_idx), table.select_rows(qry_idx)};
}

Table cap_query(const Table& qry, std::size_t cap, std::uint64_t seed) {
    if (cap < 1) throw DataError("cap_query: cap must be >= 1");
    if (qry.n_rows() <= cap) return qry;
    Rng rng(mix_key(seed, 0x636170ULL));
    return qry.select_rows(rng.sample_without_replacement(qry.n_rows(), cap));
}

Tensor cap_query(const Tensor& z_qry, std::size_t cap, std::uint64_t seed) {
    if (cap < 1) throw DataError("cap_query: cap must be >= 1");
    if (z_qry.rank() != 3) throw ShapeError("cap_query: latents must be rank-3");
    const std::size_t m = z_qry.dim(0);
    if (m <= cap) return z_qry;
    Rng rng(mix_key(seed, 0x636170ULL));
    const auto keep = rng.sample_without_replacement(m, cap);
    const std::size_t stride = z_qry.dim(1) * z_qry.dim(2);
    Tensor out({cap, z_qry.dim(1), z_qry.dim(2)});
    for (std::size_t i = 0; i < keep.size(); ++i) {
        const double* src = z_qry.data() + keep[i] * stride;
        std::copy(src, src + stride, out.data() + i * stride);
    }
    return out;
}

Table subsample_training(const Table& table, double ratio, std::uint64_t seed) {
    table.validate();
    const std::size_t n = table.n_rows();
    const std::size_t keep =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
    if (keep < 2) throw DataError("subsample_training: resulting size below 2");
    if (keep >= n) return table;
    Rng rng(mix_key(seed, 0x73756273ULL));
    return table.select_rows(rng.sample_without_replacement(n, keep));
}

std::string CorpusManifest::to_json_string() const {
    json tasks_json = json::array();
    for (const TaskSpec& t : tasks) {
        tasks_json.push_back({{"family", family_name(t.family)},
                              {"n_rows", t.n_rows},
                              {"n_features", t.n_features},
                              {"seed", t.seed},
                              {"components", t.components},
                              {"noise", t.noise},
                              {"categories", t.categories}});
    }
    return json{{"tasks", std::move(tasks_json)}}.dump(2);
}

CorpusManifest CorpusManifest::from_json_string(const std::string& text) {
    json root;
    try {
        root = json::parse(text);
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest: invalid JSON: ") + e.what());
    }
    CorpusManifest manifest;
    try {
        for (const json& jt : root.at("tasks")) {
            TaskSpec t;
            t.family = family_from_name(jt.at("family").get<std::string>());
            t.n_rows = jt.at("n_rows").get<std::size_t>();
            t.n_features = jt.at("n_features").get<std::size_t>();
            t.seed = jt.at("seed").get<std::uint64_t>();
            t.components = jt.value("components", std::size_t{2});
            t.noise = jt.value("noise", 0.1);
            t.categories = jt.value("categories", std::size_t{3});
            t.validate();
            manifest.tasks.push_back(t);
        }
    } catch (const json::exception& e) {
        throw DataError(std::string("manifest: ") + e.what());
    }
    if (manifest.tasks.empty()) throw DataError("manifest: no tasks");
    return manifest;
}

CorpusManifest CorpusManifest::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("manifest: cannot open '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json_string(ss.str());
}

void CorpusManifest::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("manifest: cannot open '" + path + "' for writing");
    out << to_json_string() << '\n';
}

void materialize_corpus(const CorpusManifest& manifest, const std::string& out_dir,
                        std::size_t variants, bool permute, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    char task_id[32];
    for (std::size_t i = 0; i < manifest.tasks.size(); ++i) {
        std::snprintf(task_id, sizeof(task_id), "task%04zu", i);
        const fs::path task_dir = fs::path(out_dir) / task_id;
        fs::create_directories(task_dir);
        const Table base = generate_dataset(manifest.tasks[i]);
        std::vector<Table> tables;
        if (permute) {
            tables = permutation_variants(base, variants, mix_key(seed, i));
        } else {
            tables.push_back(base);  // single identity variant
        }
        // Column order differs per variant, so each carries its own schema.
        for (std::size_t v = 0; v < tables.size(); ++v) {
            const std::string stem = "v" + std::to_string(v);
            write_csv(tables[v], (task_dir / (stem + ".csv")).string());
            write_schema(tables[v].schema, (task_dir / (stem + ".schema.json")).string());
        }
    }
}

}  // namespace icls
