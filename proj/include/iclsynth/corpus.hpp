#pragma once

#include <string>
#include <utility>
#include <vector>

#include "iclsynth/rng.hpp"
#include "iclsynth/table.hpp"
#include "iclsynth/tensor.hpp"

namespace icls {

enum class TaskFamily { GaussianMixture, LinearRegression, CategoricalMixture, TwoMoonsLike };

std::string family_name(TaskFamily f);
TaskFamily family_from_name(const std::string& name);

// One procedurally generated dataset. n_features counts the non-target
// columns; generated tables stay within the corpus filters (>= 50 rows,
// <= 50 features).
struct TaskSpec {
    TaskFamily family = TaskFamily::GaussianMixture;
    std::size_t n_rows = 100;
    std::size_t n_features = 4;
    std::uint64_t seed = 0;
    std::size_t components = 2;   // mixture families
    double noise = 0.1;           // family noise scale
    std::size_t categories = 3;   // categorical features per column

    void validate() const;
};

struct SplitSpec {
    double context_ratio = 0.3;
    std::uint64_t seed = 0;
};

// The distribution behind a TaskSpec; tests use it for fresh i.i.d. draws
// that never touched the generated table.
class GroundTruth {
public:
    explicit GroundTruth(const TaskSpec& spec);
    const TableSchema& schema() const { return schema_; }
    Table sample(std::size_t n, std::uint64_t draw_seed) const;

    // Gaussian-mixture families only: per-feature marginal moments of the
    // full mixture.
    std::vector<double> feature_means() const { return feature_means_; }
    std::vector<double> feature_stddevs() const { return feature_stddevs_; }

private:
    TaskSpec spec_;
    TableSchema schema_;
    // gaussian mixture / two moons / categorical mixture parameters
    std::vector<double> weights_;
    std::vector<std::vector<double>> means_;    // component x feature
    std::vector<std::vector<double>> stddevs_;  // component x feature
    std::vector<std::vector<std::vector<double>>> cat_probs_;  // component x feature x category
    std::vector<double> lin_weights_;  // linear regression
    double lin_bias_ = 0.0;
    std::vector<double> feature_means_;
    std::vector<double> feature_stddevs_;
};

// Deterministic table for the spec (equals GroundTruth(spec).sample(n_rows,
// seed-derived draw key)).
Table generate_dataset(const TaskSpec& spec);

// k row+column permuted variants; the target column keeps its identity and
// position, and every variant preserves the multiset of rows.
std::vector<Table> permutation_variants(const Table& table, std::size_t k, std::uint64_t seed);

// Disjoint (context, query) partition with M_ctx = floor(r * N).
std::pair<Table, Table> split_context_query(const Table& table, const SplitSpec& split);

// Uniform subsample without replacement down to `cap` rows; identity when
// already within the cap.
Table cap_query(const Table& qry, std::size_t cap, std::uint64_t seed);
Tensor cap_query(const Tensor& z_qry, std::size_t cap, std::uint64_t seed);

// floor(ratio * N) uniform rows without replacement.
Table subsample_training(const Table& table, double ratio, std::uint64_t seed);

// Corpus manifest: a JSON list of task specs fully determines a corpus.
struct CorpusManifest {
    std::vector<TaskSpec> tasks;

    std::string to_json_string() const;
    static CorpusManifest from_json_string(const std::string& text);
    static CorpusManifest load(const std::string& path);
    void save(const std::string& path) const;
};

// Materializes {out_dir}/{task_id}/{variant_id}.csv plus a schema.json per
// task directory. With permute=false a single identity variant is written.
void materialize_corpus(const CorpusManifest& manifest, const std::string& out_dir,
                        std::size_t variants, bool permute, std::uint64_t seed);

}  // namespace icls
