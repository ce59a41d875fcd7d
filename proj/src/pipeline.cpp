#include "iclsynth/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>

#include "iclsynth/kernels.hpp"
#include "iclsynth/linalg.hpp"
#include "iclsynth/optim.hpp"
#include "json.hpp"

namespace icls {

using nlohmann::json;

namespace {

constexpr std::uint64_t kCorpusTag = 0x636f7270ULL;
constexpr std::uint64_t kInitTag = 0x696e6974ULL;
constexpr std::uint64_t kOrderTag = 0x6f726472ULL;
constexpr std::uint64_t kStepTag = 0x73746570ULL;
constexpr std::uint64_t kSampleTag = 0x73616d70ULL;

double now_seconds() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

}  // namespace

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw DataError("train config: lr must be positive");
    if (!(warmup_ratio > 0.0) || !(warmup_ratio < 1.0)) {
        throw DataError("train config: warmup_ratio must be in (0, 1)");
    }
    if (weight_decay != 0.0) throw DataError("train config: weight decay is not supported");
    if (epochs == 0) throw DataError("train config: epochs must be >= 1");
    if (batch_query_cap == 0) throw DataError("train config: batch_query_cap must be >= 1");
    if (!(context_ratio_min > 0.0) || !(context_ratio_max < 1.0) ||
        !(context_ratio_min <= context_ratio_max)) {
        throw DataError("train config: bad context ratio range");
    }
}

std::uint64_t TrainConfig::fingerprint() const {
    // FNV-1a over the textual field dump.
    const std::string text =
        std::to_string(lr) + "|" + std::to_string(warmup_ratio) + "|" +
        std::to_string(epochs) + "|" + std::to_string(batch_query_cap) + "|" +
        std::to_string(context_ratio_min) + "|" + std::to_string(context_ratio_max) + "|" +
        std::to_string(seed) + "|" + std::to_string(checkpoint_every);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

namespace {

struct TrainSet {
    std::vector<Table> tables;
    std::vector<ColumnStats> stats;
    std::vector<std::string> ids;
};

TrainSet expand_corpus(const CorpusManifest& manifest, std::size_t variants, bool permute,
                       std::uint64_t seed) {
    TrainSet set;
    for (std::size_t i = 0; i < manifest.tasks.size(); ++i) {
        const Table base = generate_dataset(manifest.tasks[i]);
        std::vector<Table> expanded;
        if (permute) {
            expanded = permutation_variants(base, variants, mix_key(seed, kCorpusTag, i));
        } else {
            expanded.push_back(base);
        }
        for (std::size_t v = 0; v < expanded.size(); ++v) {
            set.stats.push_back(fit_stats(expanded[v]));
            set.tables.push_back(std::move(expanded[v]));
            set.ids.push_back("task" + std::to_string(i) + "/v" + std::to_string(v));
        }
    }
    return set;
}

PretrainResult run_training(const TrainSet& set, std::uint64_t encoder_seed,
                            std::size_t latent_dim, const DenoiserConfig& dcfg,
                            const TrainConfig& tcfg, const ScheduleConfig& scfg,
                            std::size_t default_cadence, const StepObserver& observer) {
    tcfg.validate();
    dcfg.validate();
    scfg.validate();
    if (dcfg.latent_dim != latent_dim) {
        throw DataError("pretrain: encoder latent dim does not match the denoiser config");
    }
    if (set.tables.empty()) throw DataError("pretrain: empty corpus");

    DenoiserModel model = DenoiserModel::init(dcfg, mix_key(tcfg.seed, kInitTag));
    std::vector<Tensor*> params;
    params.reserve(model.parameters().size());
    for (Tensor& p : model.parameters()) params.push_back(&p);
    AdamState adam_state;
    AdamConfig adam;

    const std::size_t n_datasets = set.tables.size();
    const std::size_t total_steps = tcfg.epochs * n_datasets;
    const std::size_t cadence =
        tcfg.checkpoint_every > 0 ? tcfg.checkpoint_every : default_cadence;

    PretrainResult result;
    result.model_config = dcfg;
    const std::uint64_t fingerprint = tcfg.fingerprint();
    auto snapshot = [&](std::uint64_t step) {
        Checkpoint ckpt;
        ckpt.params = model.parameters();
        ckpt.step = step;
        ckpt.config_fingerprint = fingerprint;
        result.checkpoints.push_back(std::move(ckpt));
    };
    snapshot(0);

    const double t0 = now_seconds();
    std::uint64_t step = 0;
    std::vector<std::size_t> order(n_datasets);
    for (std::size_t i = 0; i < n_datasets; ++i) order[i] = i;

    for (std::size_t epoch = 0; epoch < tcfg.epochs; ++epoch) {
        Rng order_rng(mix_key(tcfg.seed, kOrderTag, epoch));
        order_rng.shuffle(order);
        for (std::size_t pos = 0; pos < n_datasets; ++pos) {
            const std::size_t idx = order[pos];
            const Table& table = set.tables[idx];
            Rng step_rng(mix_key(tcfg.seed, kStepTag, step));

            const double r = step_rng.uniform(tcfg.context_ratio_min, tcfg.context_ratio_max);
            SplitSpec split{r, step_rng.next_u64()};
            auto [ctx, qry] = split_context_query(table, split);
            auto [z_ctx, z_qry] = encode(ctx, qry, set.stats[idx], encoder_seed, latent_dim);
            z_qry = cap_query(z_qry, tcfg.batch_query_cap, step_rng.next_u64());

            const double sigma = sample_sigma(step_rng, scfg);
            const Tensor z_sigma = add_noise(z_qry, sigma, step_rng);

            Graph g;
            std::vector<Var> bound = model.bind(g);
            Var out = model.forward(g, bound, g.constant(z_sigma), sigma, g.constant(z_ctx),
                                    scfg);
            Var loss =
                g.scale(g.mean_sq_diff(out, g.constant(z_qry)), loss_weight(sigma, scfg));
            const double loss_value = g.value(loss)[0];
            if (!std::isfinite(loss_value)) {
                throw NumericError("pretrain: non-finite loss on dataset " + set.ids[idx] +
                                   " at step " + std::to_string(step));
            }
            g.backward(loss);
            std::vector<Tensor> grads;
            grads.reserve(bound.size());
            for (Var v : bound) grads.push_back(g.grad(v));

            adam.lr = cosine_warmup_lr(tcfg.lr, step, total_steps, tcfg.warmup_ratio);
            adam_step(params, grads, adam_state, adam);

            result.log.push_back({step, loss_value, adam.lr, now_seconds() - t0});
            if (observer) observer(step, loss_value);
            ++step;
            if (step % cadence == 0 && step < total_steps) snapshot(step);
        }
    }
    snapshot(step);
    return result;
}

}  // namespace

PretrainResult pretrain(const CorpusManifest& manifest, std::size_t variants, bool permute,
                        std::uint64_t encoder_seed, std::size_t latent_dim,
                        const DenoiserConfig& dcfg, const TrainConfig& tcfg,
                        const ScheduleConfig& scfg, const StepObserver& observer) {
    if (manifest.tasks.empty()) throw DataError("pretrain: empty manifest");
    const TrainSet set = expand_corpus(manifest, variants, permute, tcfg.seed);
    const std::size_t per_epoch = set.tables.size();
    return run_training(set, encoder_seed, latent_dim, dcfg, tcfg, scfg, per_epoch, observer);
}

PretrainResult pretrain_tables(const std::vector<Table>& datasets, std::uint64_t encoder_seed,
                               std::size_t latent_dim, const DenoiserConfig& dcfg,
                               const TrainConfig& tcfg, const ScheduleConfig& scfg,
                               const StepObserver& observer) {
    TrainSet set;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        set.stats.push_back(fit_stats(datasets[i]));
        set.tables.push_back(datasets[i]);
        set.ids.push_back("dataset" + std::to_string(i));
    }
    return run_training(set, encoder_seed, latent_dim, dcfg, tcfg, scfg,
                        std::max<std::size_t>(1, set.tables.size()), observer);
}

PretrainResult train_dataset_specific(const Table& table, std::uint64_t encoder_seed,
                                      std::size_t latent_dim, const DenoiserConfig& dcfg,
                                      const TrainConfig& tcfg, const ScheduleConfig& scfg,
                                      const StepObserver& observer) {
    TrainSet set;
    set.tables.push_back(table);
    set.stats.push_back(fit_stats(table));
    set.ids.push_back("target/v0");
    // One step per epoch; default to a dense checkpoint cadence for the
    // training-dynamics studies.
    const std::size_t cadence = std::max<std::size_t>(1, tcfg.epochs / 25);
    return run_training(set, encoder_seed, latent_dim, dcfg, tcfg, scfg, cadence, observer);
}

LatentFid latent_fid(const LatentTensor& generated, const LatentTensor& real) {
    if (generated.rank() != 3 || real.rank() != 3) {
        throw ShapeError("latent_fid: latents must be rank-3");
    }
    if (generated.dim(1) != real.dim(1) || generated.dim(2) != real.dim(2)) {
        throw ShapeError("latent_fid: feature/latent dims differ: " + generated.shape_str() +
                         " vs " + real.shape_str());
    }
    if (generated.dim(0) < 2 || real.dim(0) < 2) {
        throw DataError("latent_fid: need at least 2 samples on each side");
    }

    // Pool each sample's (F x d) block to a d-vector by feature-axis mean.
    auto pool = [](const LatentTensor& z) {
        const std::size_t m = z.dim(0), f = z.dim(1), d = z.dim(2);
        Tensor out({m, d});
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t ff = 0; ff < f; ++ff) {
                kern::active().axpy(out.data() + i * d, 1.0 / static_cast<double>(f),
                                    z.data() + (i * f + ff) * d, d);
            }
        }
        return out;
    };
    auto moments = [](const Tensor& x) {
        const std::size_t n = x.dim(0), d = x.dim(1);
        Tensor mu({d});
        for (std::size_t i = 0; i < n; ++i) {
            kern::active().axpy(mu.data(), 1.0 / static_cast<double>(n), x.data() + i * d, d);
        }
        Tensor cov({d, d});
        Tensor centered = x;
        for (std::size_t i = 0; i < n; ++i) {
            kern::active().axpy(centered.data() + i * d, -1.0, mu.data(), d);
        }
        kern::active().matmul_at_b_acc(cov.data(), centered.data(), centered.data(), n, d, d);
        const double inv = 1.0 / static_cast<double>(n - 1);
        for (std::size_t i = 0; i < d * d; ++i) cov[i] *= inv;
        return std::pair{mu, cov};
    };

    const Tensor pg = pool(generated);
    const Tensor pr = pool(real);
    auto [mu1, s1] = moments(pg);
    auto [mu2, s2] = moments(pr);

    double mean_term = 0.0;
    for (std::size_t i = 0; i < mu1.numel(); ++i) {
        mean_term += (mu1[i] - mu2[i]) * (mu1[i] - mu2[i]);
    }
    double trace_term = 0.0;
    for (std::size_t i = 0; i < s1.dim(0); ++i) trace_term += s1.at(i, i) + s2.at(i, i);
    trace_term -= 2.0 * trace_sqrt_product(s1, s2);

    LatentFid fid;
    fid.value = mean_term + trace_term;
    fid.pooled_dim = mu1.numel();
    fid.n_generated = generated.dim(0);
    fid.n_real = real.dim(0);
    return fid;
}

DenoiserModel model_from_checkpoint(const DenoiserConfig& cfg, const Checkpoint& ckpt) {
    DenoiserModel model = DenoiserModel::init(cfg, 0);
    if (model.parameters().size() != ckpt.params.size()) {
        throw DataError("checkpoint: parameter count does not match config");
    }
    for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
        if (!model.parameters()[i].same_shape(ckpt.params[i])) {
            throw DataError("checkpoint: parameter shape mismatch at index " +
                            std::to_string(i));
        }
        model.parameters()[i] = ckpt.params[i];
    }
    return model;
}

namespace {

bool same_task(const TaskSpec& a, const TaskSpec& b) {
    return a.family == b.family && a.n_rows == b.n_rows && a.n_features == b.n_features &&
           a.seed == b.seed && a.components == b.components && a.noise == b.noise &&
           a.categories == b.categories;
}

}  // namespace

SelectionReport select_checkpoint(const std::vector<Checkpoint>& checkpoints,
                                  const DenoiserConfig& dcfg,
                                  const CorpusManifest& train_manifest,
                                  const CorpusManifest& validation_manifest,
                                  std::uint64_t encoder_seed, std::size_t latent_dim,
                                  const ScheduleConfig& scfg, std::uint64_t seed) {
    if (checkpoints.empty()) throw DataError("select_checkpoint: empty checkpoint list");
    for (const TaskSpec& t : train_manifest.tasks) {
        for (const TaskSpec& v : validation_manifest.tasks) {
            if (same_task(t, v)) {
                throw DataError("select_checkpoint: validation corpus overlaps training corpus");
            }
        }
    }

    // Fixed validation inputs shared by all checkpoints: same splits, same
    // sampling noise.
    struct ValCase {
        LatentTensor z_ctx;
        LatentTensor z_qry;
        std::uint64_t noise_seed;
    };
    std::vector<ValCase> cases;
    for (std::size_t i = 0; i < validation_manifest.tasks.size(); ++i) {
        const Table table = generate_dataset(validation_manifest.tasks[i]);
        const ColumnStats stats = fit_stats(table);
        SplitSpec split{0.3, mix_key(seed, kSampleTag, i)};
        auto [ctx, qry] = split_context_query(table, split);
        auto [z_ctx, z_qry] = encode(ctx, qry, stats, encoder_seed, latent_dim);
        cases.push_back({std::move(z_ctx), std::move(z_qry), mix_key(seed, i, 0x6e6f6973ULL)});
    }

    SelectionReport report;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
        const DenoiserModel model = model_from_checkpoint(dcfg, checkpoints[c]);
        double acc = 0.0;
        for (const ValCase& vc : cases) {
            const LatentTensor gen =
                sample_latents(model, vc.z_ctx, vc.z_qry.dim(0), scfg, vc.noise_seed);
            acc += latent_fid(gen, vc.z_qry).value;
        }
        const double mean_fid = acc / static_cast<double>(cases.size());
        report.entries.push_back({checkpoints[c].step, mean_fid});
        if (mean_fid < best) {  // strict: ties keep the earliest step
            best = mean_fid;
            report.selected_index = c;
        }
    }
    return report;
}

LatentTensor sample_latents(const DenoiserModel& model, const LatentTensor& z_ctx, std::size_t k,
                            const ScheduleConfig& scfg, std::uint64_t seed) {
    if (k < 1) throw DataError("sample_latents: k must be >= 1");
    if (z_ctx.rank() != 3 || z_ctx.dim(0) < 1) {
        throw ShapeError("sample_latents: context must be a non-empty rank-3 tensor");
    }
    scfg.validate();
    const std::size_t f_count = z_ctx.dim(1);
    const std::size_t d = z_ctx.dim(2);

    Rng noise_rng(mix_key(seed, kSampleTag));
    LatentTensor z({k, f_count, d});
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = scfg.sigma_max * noise_rng.gaussian();

    const std::vector<double> ladder = sigma_ladder(scfg);
    // Query rows are conditionally independent given the context, so
    // trajectories can be integrated in bounded chunks without changing any
    // value.
    constexpr std::size_t kChunk = 512;
    for (std::size_t begin = 0; begin < k; begin += kChunk) {
        const std::size_t len = std::min(kChunk, k - begin);
        const std::size_t stride = f_count * d;
        LatentTensor chunk({len, f_count, d});
        std::copy(z.data() + begin * stride, z.data() + (begin + len) * stride, chunk.data());
        DenoiseFn denoise = [&](const Tensor& zt, double sigma) {
            return model.denoise(zt, sigma, z_ctx, scfg);
        };
        for (std::size_t i = 0; i + 1 < ladder.size(); ++i) {
            chunk = heun_step(denoise, chunk, ladder[i], ladder[i + 1]);
        }
        std::copy(chunk.data(), chunk.data() + chunk.numel(), z.data() + begin * stride);
    }
    return z;
}

SynthesisResult synthesize(const Table& table, const DenoiserModel& model,
                           const SynthesisConfig& cfg, const ScheduleConfig& scfg) {
    table.validate();
    if (cfg.k < 1) throw DataError("synthesize: k must be >= 1");

    SplitSpec split{cfg.context_ratio, cfg.split_seed};
    auto [ctx, qry] = split_context_query(table, split);
    const ColumnStats stats = fit_stats(table);
    const std::size_t d = model.config().latent_dim;
    auto [z_ctx, z_qry] = encode(ctx, qry, stats, cfg.encoder_seed, d);

    const LatentTensor z_hat = sample_latents(model, z_ctx, cfg.k, scfg, cfg.noise_seed);

    // Decoders are trained on the query side only; context rows condition
    // generation but never reach decoder training.
    DecoderTrainConfig dec_cfg = cfg.decoder;
    dec_cfg.seed = mix_key(cfg.decoder.seed, cfg.split_seed, 0x646563ULL);
    TrainedDecoders trained = train_decoders(z_qry, qry, stats, dec_cfg);

    SynthesisResult result;
    result.synthetic = decode(z_hat, trained.decoders, stats, table.schema);
    result.decoder_losses = trained.final_losses;
    result.m_ctx = ctx.n_rows();
    result.m_qry = qry.n_rows();
    return result;
}

void write_training_log(const std::vector<TrainLogRecord>& log, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("training log: cannot open '" + path + "'");
    for (const TrainLogRecord& rec : log) {
        json j;
        j["step"] = rec.step;
        j["loss"] = rec.loss;
        j["lr"] = rec.lr;
        j["wallclock"] = rec.wallclock_s;
        out << j.dump() << '\n';
    }
}

}  // namespace icls
