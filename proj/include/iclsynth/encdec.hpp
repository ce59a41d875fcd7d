#pragma once

#include <memory>
#include <utility>
#include <vector>

#include "iclsynth/table.hpp"
#include "iclsynth/tensor.hpp"

namespace icls {

// Rank-3 (samples x features x d) latents.
using LatentTensor = Tensor;

// Maps tables into the shared latent space. The default implementation is a
// deterministic seeded embedder; the interface admits external encoders.
class Encoder {
public:
    virtual ~Encoder() = default;
    virtual std::size_t latent_dim() const = 0;
    virtual LatentTensor encode_table(const Table& table, const ColumnStats& stats) const = 0;
};

// Deterministic per-column affine/codebook embedder. A standardized numeric
// value v in column f maps to v * u_f + b_f; a categorical cell with index c
// maps to e_{f,c}. All vectors are unit-norm draws from a PRNG keyed by
// (seed, column index, role), so equal keys give equal embeddings across
// datasets.
class SeededCodebookEncoder : public Encoder {
public:
    SeededCodebookEncoder(std::uint64_t seed, std::size_t d) : seed_(seed), d_(d) {}

    std::size_t latent_dim() const override { return d_; }
    LatentTensor encode_table(const Table& table, const ColumnStats& stats) const override;

    // Column basis accessors (used by tests and the closed-form inverse).
    Tensor direction(std::size_t column) const;  // u_f
    Tensor bias(std::size_t column) const;       // b_f
    Tensor codebook(std::size_t column, std::size_t category) const;  // e_{f,c}

private:
    std::uint64_t seed_;
    std::size_t d_;
};

// Encodes a context/query pair sharing one schema; stats must be fitted on
// their union.
std::pair<LatentTensor, LatentTensor> encode(const Table& ctx, const Table& qry,
                                             const ColumnStats& stats, std::uint64_t seed,
                                             std::size_t d);

// Per-feature MLP decoder: d -> hidden -> hidden -> output, ReLU activations,
// dropout after each hidden layer during training.
struct FeatureDecoder {
    std::size_t column = 0;
    ColumnKind kind = ColumnKind::Numeric;
    Tensor w1, b1, w2, b2, w3, b3;

    std::size_t output_dim() const { return w3.dim(1); }
    // Dropout disabled; (M x d) -> (M x output_dim).
    Tensor forward_eval(const Tensor& z) const;
};

struct DecoderTrainConfig {
    std::size_t hidden = 768;
    std::size_t epochs = 400;
    double lr = 2e-5;
    double dropout = 0.1;
    std::uint64_t seed = 0;
};

// Desk-scale preset: smaller hidden size, larger learning rate.
DecoderTrainConfig desk_decoder_config();

struct TrainedDecoders {
    std::vector<FeatureDecoder> decoders;      // one per column, schema order
    std::vector<double> final_losses;          // training loss per column
};

// Trains one decoder per column (including the target) on the query set,
// minimizing MSE for numeric and cross-entropy for categorical columns with
// Adam. Throws NumericError carrying the column id on divergence.
TrainedDecoders train_decoders(const LatentTensor& z_qry, const Table& qry,
                               const ColumnStats& stats, const DecoderTrainConfig& cfg);

// Maps generated latents back to a raw table. Numeric outputs are
// de-standardized through `stats`; categorical outputs take the argmax with
// ties broken toward the lowest category index.
Table decode(const LatentTensor& z, const std::vector<FeatureDecoder>& decoders,
             const ColumnStats& stats, const TableSchema& schema);

}  // namespace icls
