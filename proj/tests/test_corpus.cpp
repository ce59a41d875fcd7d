#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "iclsynth/corpus.hpp"

using namespace icls;

namespace {

// Canonical row multiset: sort columns by name, render rows as strings.
std::multiset<std::string> row_multiset(const Table& t) {
    std::vector<std::size_t> order(t.n_cols());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return t.schema.columns[a].name < t.schema.columns[b].name;
    });
    std::multiset<std::string> rows;
    for (std::size_t r = 0; r < t.n_rows(); ++r) {
        std::string key;
        for (std::size_t f : order) {
            if (t.schema.columns[f].kind == ColumnKind::Numeric) {
                key += format_double(t.cols[f].num[r]);
            } else {
                key += std::to_string(t.cols[f].cat[r]);
            }
            key += "|";
        }
        rows.insert(std::move(key));
    }
    return rows;
}

}  // namespace

TEST_CASE("gaussian mixture sampler statistics") {
    TaskSpec spec;
    spec.family = TaskFamily::GaussianMixture;
    spec.n_rows = 500;
    spec.n_features = 3;
    spec.components = 1;
    spec.seed = 11;
    const GroundTruth truth(spec);
    const Table t = truth.sample(500, 99);

    const auto means = truth.feature_means();
    const auto stds = truth.feature_stddevs();
    for (std::size_t f = 0; f < 3; ++f) {
        double m = 0.0;
        for (double v : t.cols[f].num) m += v;
        m /= 500.0;
        CHECK(std::abs(m - means[f]) < 3.0 * stds[f] / std::sqrt(500.0));
    }
}

TEST_CASE("generate_dataset is deterministic") {
    TaskSpec spec;
    spec.family = TaskFamily::TwoMoonsLike;
    spec.n_rows = 80;
    spec.n_features = 4;
    spec.seed = 5;
    const Table a = generate_dataset(spec);
    const Table b = generate_dataset(spec);
    REQUIRE(a.n_rows() == 80);
    for (std::size_t f = 0; f < a.n_cols(); ++f) {
        if (a.schema.columns[f].kind == ColumnKind::Numeric) {
            for (std::size_t r = 0; r < 80; ++r) CHECK(a.cols[f].num[r] == b.cols[f].num[r]);
        } else {
            for (std::size_t r = 0; r < 80; ++r) CHECK(a.cols[f].cat[r] == b.cols[f].cat[r]);
        }
    }
}

TEST_CASE("categorical mixture frequencies track the ground truth") {
    TaskSpec spec;
    spec.family = TaskFamily::CategoricalMixture;
    spec.n_rows = 1000;
    spec.n_features = 2;
    spec.components = 2;
    spec.categories = 2;
    spec.seed = 3;
    const GroundTruth truth(spec);
    const Table big = truth.sample(1000, 1);
    const Table fresh = truth.sample(1000, 2);
    // Two independent large draws agree on marginal frequencies within a
    // binomial-style bound.
    for (std::size_t f = 0; f < 2; ++f) {
        double p1 = 0.0, p2 = 0.0;
        for (int c : big.cols[f].cat) p1 += c == 0 ? 1.0 : 0.0;
        for (int c : fresh.cols[f].cat) p2 += c == 0 ? 1.0 : 0.0;
        CHECK(std::abs(p1 - p2) / 1000.0 < 0.05);
    }
}

TEST_CASE("task spec bounds follow the corpus filters") {
    TaskSpec too_small;
    too_small.n_rows = 49;
    CHECK_THROWS_AS(too_small.validate(), DataError);
    TaskSpec too_wide;
    too_wide.n_features = 51;
    CHECK_THROWS_AS(too_wide.validate(), DataError);
    TaskSpec ok;
    ok.n_rows = 50;
    ok.n_features = 50;
    CHECK_NOTHROW(ok.validate());
}

TEST_CASE("permutation variants preserve rows and the target column") {
    TaskSpec spec;
    spec.family = TaskFamily::GaussianMixture;
    spec.n_rows = 60;
    spec.n_features = 4;
    spec.seed = 9;
    const Table base = generate_dataset(spec);
    const std::size_t target = base.schema.target_index();

    const auto variants = permutation_variants(base, 5, 123);
    REQUIRE(variants.size() == 5);
    const auto base_rows = row_multiset(base);
    for (const Table& v : variants) {
        CHECK(v.schema.columns[target].target);
        CHECK(v.schema.columns[target].name == base.schema.columns[target].name);
        CHECK(row_multiset(v) == base_rows);
    }

    // 826 inputs with k=5 variants each give 4130 datasets; per-table the
    // count contract is just k.
    CHECK(permutation_variants(base, 1, 7).size() == 1);
    CHECK(826 * 5 == 4130);
}

TEST_CASE("split_context_query floor rule and partition") {
    TaskSpec spec;
    spec.family = TaskFamily::LinearRegression;
    spec.n_rows = 100;
    spec.n_features = 3;
    spec.seed = 2;
    const Table t = generate_dataset(spec);

    SplitSpec split{0.3, 77};
    auto [ctx, qry] = split_context_query(t, split);
    CHECK(ctx.n_rows() == 30);
    CHECK(qry.n_rows() == 70);

    // Exact partition by the canonical row multiset.
    const auto whole = row_multiset(t);
    auto ctx_rows = row_multiset(ctx);
    const auto qry_rows = row_multiset(qry);
    std::multiset<std::string> merged = ctx_rows;
    merged.insert(qry_rows.begin(), qry_rows.end());
    CHECK(merged == whole);

    // N=10, r=0.3 floor rule.
    Table small = t.select_rows({0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
    auto [c2, q2] = split_context_query(small, {0.3, 1});
    CHECK(c2.n_rows() == 3);
    CHECK(q2.n_rows() == 7);

    CHECK_THROWS_AS(split_context_query(small, {0.05, 1}), DataError);
}

TEST_CASE("cap_query identity and subsampling") {
    TaskSpec spec;
    spec.family = TaskFamily::GaussianMixture;
    spec.n_rows = 300;
    spec.n_features = 2;
    spec.seed = 4;
    const Table t = generate_dataset(spec);

    const Table small = t.select_rows({0, 1, 2, 3, 4});
    const Table same = cap_query(small, 128, 1);
    CHECK(same.n_rows() == 5);

    const Table capped = cap_query(t, 128, 1);
    CHECK(capped.n_rows() == 128);
    // All rows come from the input.
    const auto whole = row_multiset(t);
    for (const auto& row : row_multiset(capped)) CHECK(whole.count(row) >= 1);

    const Table capped2 = cap_query(t, 128, 1);
    CHECK(row_multiset(capped2) == row_multiset(capped));

    // Tensor overload keeps whole sample slices.
    Tensor z({300, 2, 4});
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = static_cast<double>(i);
    const Tensor zc = cap_query(z, 128, 9);
    REQUIRE(zc.shape() == std::vector<std::size_t>{128, 2, 4});
    for (std::size_t i = 0; i < 128; ++i) {
        const double first = zc.at(i, 0, 0);
        const std::size_t src = static_cast<std::size_t>(first) / 8;
        for (std::size_t k = 0; k < 8; ++k) {
            CHECK(zc[i * 8 + k] == z[src * 8 + k]);
        }
    }
}

TEST_CASE("subsample_training floor sizes") {
    TaskSpec spec;
    spec.family = TaskFamily::LinearRegression;
    spec.n_rows = 2000;  // upper corpus bound
    spec.n_features = 2;
    spec.seed = 6;
    const Table t = generate_dataset(spec);
    CHECK(subsample_training(t, 1.0, 3).n_rows() == 2000);
    CHECK(subsample_training(t, 0.2, 3).n_rows() == 400);
    // The documented anchor: floor(0.2 * 2088) = 417.
    CHECK(static_cast<std::size_t>(std::floor(0.2 * 2088)) == 417);

    const Table a = subsample_training(t, 0.4, 5);
    const Table b = subsample_training(t, 0.4, 5);
    CHECK(row_multiset(a) == row_multiset(b));
}

TEST_CASE("manifest json round trip and corpus materialization") {
    CorpusManifest manifest;
    for (int i = 0; i < 3; ++i) {
        TaskSpec spec;
        spec.family = i == 0 ? TaskFamily::GaussianMixture
                             : (i == 1 ? TaskFamily::LinearRegression
                                       : TaskFamily::CategoricalMixture);
        spec.n_rows = 60 + 10 * static_cast<std::size_t>(i);
        spec.n_features = 3;
        spec.seed = static_cast<std::uint64_t>(i);
        manifest.tasks.push_back(spec);
    }
    const CorpusManifest back = CorpusManifest::from_json_string(manifest.to_json_string());
    REQUIRE(back.tasks.size() == 3);
    CHECK(back.tasks[1].family == TaskFamily::LinearRegression);
    CHECK(back.tasks[2].n_rows == 80);

    namespace fs = std::filesystem;
    const fs::path dir =
        fs::temp_directory_path() / ("icls_corpus_" + std::to_string(::getpid()));
    materialize_corpus(manifest, dir.string(), 5, true, 42);
    CHECK(fs::exists(dir / "task0000" / "v4.csv"));
    CHECK(fs::exists(dir / "task0002" / "v0.schema.json"));

    // Byte-identical rerun.
    const fs::path dir2 = fs::path(dir.string() + "_b");
    materialize_corpus(manifest, dir2.string(), 5, true, 42);
    for (const char* rel : {"task0000/v0.csv", "task0001/v3.csv", "task0002/v2.csv"}) {
        std::ifstream f1(dir / rel, std::ios::binary), f2(dir2 / rel, std::ios::binary);
        std::stringstream s1, s2;
        s1 << f1.rdbuf();
        s2 << f2.rdbuf();
        CHECK(s1.str() == s2.str());
        CHECK(!s1.str().empty());
    }

    // --no-permute produces exactly one identity variant.
    const fs::path dir3 = fs::path(dir.string() + "_c");
    materialize_corpus(manifest, dir3.string(), 5, false, 42);
    CHECK(fs::exists(dir3 / "task0000" / "v0.csv"));
    CHECK(!fs::exists(dir3 / "task0000" / "v1.csv"));
    const Table identity = read_csv((dir3 / "task0000" / "v0.csv").string(),
                                    read_schema((dir3 / "task0000" / "v0.schema.json").string()));
    const Table direct = generate_dataset(manifest.tasks[0]);
    CHECK(row_multiset(identity) == row_multiset(direct));

    fs::remove_all(dir);
    fs::remove_all(dir2);
    fs::remove_all(dir3);
}
