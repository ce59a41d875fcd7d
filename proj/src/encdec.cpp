#include "iclsynth/encdec.hpp"

#include <cmath>

#include "iclsynth/autodiff.hpp"
#include "iclsynth/kernels.hpp"
#include "iclsynth/optim.hpp"
#include "iclsynth/rng.hpp"

namespace icls {
namespace {

enum Role : std::uint64_t { kDirection = 1, kBias = 2, kCodebook = 3 };

Tensor unit_vector(std::uint64_t seed, std::size_t d) {
    Rng rng(seed);
    Tensor v({d});
    double norm_sq = 0.0;
    do {
        for (std::size_t i = 0; i < d; ++i) v[i] = rng.gaussian();
        norm_sq = kern::active().dot(v.data(), v.data(), d);
    } while (norm_sq < 1e-12);
    const double inv = 1.0 / std::sqrt(norm_sq);
    for (std::size_t i = 0; i < d; ++i) v[i] *= inv;
    return v;
}

}  // namespace

Tensor SeededCodebookEncoder::direction(std::size_t column) const {
    return unit_vector(mix_key(seed_, column, kDirection), d_);
}

Tensor SeededCodebookEncoder::bias(std::size_t column) const {
    return unit_vector(mix_key(seed_, column, kBias), d_);
}

Tensor SeededCodebookEncoder::codebook(std::size_t column, std::size_t category) const {
    return unit_vector(mix_key(seed_, column, kCodebook, category), d_);
}

LatentTensor SeededCodebookEncoder::encode_table(const Table& table,
                                                 const ColumnStats& stats) const {
    table.validate();
    const std::size_t n = table.n_rows();
    const std::size_t f_count = table.n_cols();
    LatentTensor z({n, f_count, d_});
    for (std::size_t f = 0; f < f_count; ++f) {
        const ColumnSpec& spec = table.schema.columns[f];
        if (spec.kind == ColumnKind::Numeric) {
            const Tensor u = direction(f);
            const Tensor b = bias(f);
            const NumericStats& st = stats.numeric.at(f);
            for (std::size_t r = 0; r < n; ++r) {
                const double v = (table.cols[f].num[r] - st.mean) / st.stddev;
                double* cell = z.data() + (r * f_count + f) * d_;
                for (std::size_t k = 0; k < d_; ++k) cell[k] = v * u[k] + b[k];
            }
        } else {
            std::vector<Tensor> codes;
            codes.reserve(spec.categories.size());
            for (std::size_t c = 0; c < spec.categories.size(); ++c) {
                codes.push_back(codebook(f, c));
            }
            for (std::size_t r = 0; r < n; ++r) {
                const Tensor& e = codes[static_cast<std::size_t>(table.cols[f].cat[r])];
                double* cell = z.data() + (r * f_count + f) * d_;
                std::copy(e.data(), e.data() + d_, cell);
            }
        }
    }
    return z;
}

std::pair<LatentTensor, LatentTensor> encode(const Table& ctx, const Table& qry,
                                             const ColumnStats& stats, std::uint64_t seed,
                                             std::size_t d) {
    if (!(ctx.schema == qry.schema)) throw DataError("encode: context/query schema mismatch");
    SeededCodebookEncoder enc(seed, d);
    return {enc.encode_table(ctx, stats), enc.encode_table(qry, stats)};
}

Tensor FeatureDecoder::forward_eval(const Tensor& z) const {
    if (z.rank() != 2 || z.dim(1) != w1.dim(0)) {
        throw ShapeError("decoder: input " + z.shape_str() + " does not match weights " +
                         w1.shape_str());
    }
    Tensor h1 = matmul(z, w1);
    for (std::size_t r = 0; r < h1.dim(0); ++r) {
        for (std::size_t j = 0; j < h1.dim(1); ++j) {
            double v = h1.at(r, j) + b1[j];
            h1.at(r, j) = v > 0.0 ? v : 0.0;
        }
    }
    Tensor h2 = matmul(h1, w2);
    for (std::size_t r = 0; r < h2.dim(0); ++r) {
        for (std::size_t j = 0; j < h2.dim(1); ++j) {
            double v = h2.at(r, j) + b2[j];
            h2.at(r, j) = v > 0.0 ? v : 0.0;
        }
    }
    Tensor out = matmul(h2, w3);
    for (std::size_t r = 0; r < out.dim(0); ++r) {
        for (std::size_t j = 0; j < out.dim(1); ++j) out.at(r, j) += b3[j];
    }
    return out;
}

DecoderTrainConfig desk_decoder_config() {
    DecoderTrainConfig cfg;
    cfg.hidden = 128;
    cfg.epochs = 600;
    cfg.lr = 1e-2;
    return cfg;
}

namespace {

// Extracts the (M x d) latent slice of one feature.
Tensor feature_slice(const LatentTensor& z, std::size_t f) {
    const std::size_t m = z.dim(0), f_count = z.dim(1), d = z.dim(2);
    Tensor out({m, d});
    for (std::size_t r = 0; r < m; ++r) {
        const double* src = z.data() + (r * f_count + f) * d;
        std::copy(src, src + d, out.data() + r * d);
    }
    return out;
}

FeatureDecoder init_decoder(std::size_t column, ColumnKind kind, std::size_t d,
                            std::size_t hidden, std::size_t out_dim, Rng& rng) {
    FeatureDecoder dec;
    dec.column = column;
    dec.kind = kind;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    dec.w1 = Tensor::randn({d, hidden}, rng, s1);
    dec.b1 = Tensor({hidden});
    dec.w2 = Tensor::randn({hidden, hidden}, rng, s2);
    dec.b2 = Tensor({hidden});
    dec.w3 = Tensor::randn({hidden, out_dim}, rng, s2);
    dec.b3 = Tensor({out_dim});
    return dec;
}

}  // namespace

TrainedDecoders train_decoders(const LatentTensor& z_qry, const Table& qry,
                               const ColumnStats& stats, const DecoderTrainConfig& cfg) {
    qry.validate();
    if (z_qry.rank() != 3 || z_qry.dim(0) != qry.n_rows() || z_qry.dim(1) != qry.n_cols()) {
        throw ShapeError("train_decoders: latents " + z_qry.shape_str() +
                         " do not match the query table");
    }
    if (qry.n_rows() < 2) throw DataError("train_decoders: need at least 2 query rows");
    const std::size_t d = z_qry.dim(2);

    TrainedDecoders result;
    result.decoders.reserve(qry.n_cols());
    result.final_losses.resize(qry.n_cols(), 0.0);

    for (std::size_t f = 0; f < qry.n_cols(); ++f) {
        const ColumnSpec& spec = qry.schema.columns[f];
        const std::size_t m = qry.n_rows();
        const std::size_t out_dim =
            spec.kind == ColumnKind::Numeric ? 1 : spec.categories.size();

        Rng rng(mix_key(cfg.seed, f, 0x6465636fULL));
        FeatureDecoder dec = init_decoder(f, spec.kind, d, cfg.hidden, out_dim, rng);
        Tensor z_f = feature_slice(z_qry, f);

        Tensor target_num;
        std::vector<int> target_cat;
        if (spec.kind == ColumnKind::Numeric) {
            const NumericStats& st = stats.numeric.at(f);
            target_num = Tensor({m, 1});
            for (std::size_t r = 0; r < m; ++r) {
                target_num.at(r, 0) = (qry.cols[f].num[r] - st.mean) / st.stddev;
            }
        } else {
            target_cat = qry.cols[f].cat;
        }

        std::vector<Tensor*> params{&dec.w1, &dec.b1, &dec.w2, &dec.b2, &dec.w3, &dec.b3};
        AdamState state;
        AdamConfig adam;
        adam.lr = cfg.lr;

        double last_loss = 0.0;
        auto run_epoch = [&](bool update) {
            Graph g(update);
            Var z = g.constant(z_f);
            std::vector<Var> pv;
            pv.reserve(params.size());
            for (Tensor* p : params) pv.push_back(g.param(p));
            Var h1 = g.relu(g.add_bias_rows(g.matmul(z, pv[0]), pv[1]));
            if (update && cfg.dropout > 0.0) h1 = g.dropout(h1, cfg.dropout, rng);
            Var h2 = g.relu(g.add_bias_rows(g.matmul(h1, pv[2]), pv[3]));
            if (update && cfg.dropout > 0.0) h2 = g.dropout(h2, cfg.dropout, rng);
            Var out = g.add_bias_rows(g.matmul(h2, pv[4]), pv[5]);
            Var loss = spec.kind == ColumnKind::Numeric
                           ? g.mean_sq_diff(out, g.constant(target_num))
                           : g.cross_entropy_logits(out, target_cat);
            const double value = g.value(loss)[0];
            if (!std::isfinite(value)) {
                throw NumericError("train_decoders: loss diverged for column '" + spec.name +
                                   "' (index " + std::to_string(f) + ")");
            }
            if (update) {
                g.backward(loss);
                std::vector<Tensor> grads;
                grads.reserve(pv.size());
                for (Var v : pv) grads.push_back(g.grad(v));
                adam_step(params, grads, state, adam);
            }
            return value;
        };

        if (cfg.epochs == 0) {
            last_loss = run_epoch(false);
        } else {
            for (std::size_t e = 0; e < cfg.epochs; ++e) last_loss = run_epoch(true);
        }
        result.final_losses[f] = last_loss;
        result.decoders.push_back(std::move(dec));
    }
    return result;
}

Table decode(const LatentTensor& z, const std::vector<FeatureDecoder>& decoders,
             const ColumnStats& stats, const TableSchema& schema) {
    schema.validate();
    if (decoders.size() != schema.columns.size()) {
        throw DataError("decode: decoder count does not match schema");
    }
    Table out;
    out.schema = schema;
    out.cols.resize(schema.columns.size());
    if (z.numel() == 0) return out;  // zero latents -> empty table with schema
    if (z.rank() != 3 || z.dim(1) != schema.columns.size()) {
        throw ShapeError("decode: latents " + z.shape_str() + " do not match schema");
    }
    const std::size_t k = z.dim(0);
    for (std::size_t f = 0; f < schema.columns.size(); ++f) {
        const ColumnSpec& spec = schema.columns[f];
        Tensor pred = decoders[f].forward_eval(feature_slice(z, f));
        if (spec.kind == ColumnKind::Numeric) {
            const NumericStats& st = stats.numeric.at(f);
            out.cols[f].num.resize(k);
            for (std::size_t r = 0; r < k; ++r) {
                out.cols[f].num[r] = pred.at(r, 0) * st.stddev + st.mean;
            }
        } else {
            out.cols[f].cat.resize(k);
            for (std::size_t r = 0; r < k; ++r) {
                std::size_t best = 0;
                for (std::size_t c = 1; c < pred.dim(1); ++c) {
                    if (pred.at(r, c) > pred.at(r, best)) best = c;  // ties keep lowest index
                }
                out.cols[f].cat[r] = static_cast<int>(best);
            }
        }
    }
    return out;
}

}  // namespace icls
