#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iclsynth/corpus.hpp"
#include "iclsynth/denoiser.hpp"
#include "iclsynth/encdec.hpp"
#include "iclsynth/schedule.hpp"
#include "iclsynth/table.hpp"

namespace icls {

struct TrainConfig {
    double lr = 2e-4;
    double warmup_ratio = 0.05;
    double weight_decay = 0.0;  // cosine schedule, no decay
    std::size_t epochs = 200;   // full passes over the corpus (full scale: 20000)
    std::size_t batch_query_cap = 128;
    double context_ratio_min = 0.2;
    double context_ratio_max = 0.5;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // steps; 0 = once per epoch

    void validate() const;
    std::uint64_t fingerprint() const;
};

struct Checkpoint {
    std::vector<Tensor> params;
    std::uint64_t step = 0;
    std::uint64_t config_fingerprint = 0;
    std::optional<double> validation_fid;
};

struct TrainLogRecord {
    std::uint64_t step = 0;
    double loss = 0.0;
    double lr = 0.0;
    double wallclock_s = 0.0;
};

struct PretrainResult {
    DenoiserConfig model_config;
    std::vector<Checkpoint> checkpoints;
    std::vector<TrainLogRecord> log;
};

// Optional per-step observer (step, loss).
using StepObserver = std::function<void(std::uint64_t, double)>;

// ICL pretraining over the expanded corpus: per epoch, iterate dataset
// variants in seeded-shuffled order; per dataset draw r ~ U[ctx_min,
// ctx_max], encode, cap the query side, draw one sigma, and minimize
// lambda(sigma) * mean((D_theta(Z_sigma; sigma, Z_ctx) - Z_qry)^2) with Adam
// under warmup+cosine. Aborts with NumericError naming the dataset and step
// on a non-finite loss.
PretrainResult pretrain(const CorpusManifest& manifest, std::size_t variants, bool permute,
                        std::uint64_t encoder_seed, std::size_t latent_dim,
                        const DenoiserConfig& dcfg, const TrainConfig& tcfg,
                        const ScheduleConfig& scfg, const StepObserver& observer = {});

// Same loop over an already materialized corpus (one table per variant).
PretrainResult pretrain_tables(const std::vector<Table>& datasets, std::uint64_t encoder_seed,
                               std::size_t latent_dim, const DenoiserConfig& dcfg,
                               const TrainConfig& tcfg, const ScheduleConfig& scfg,
                               const StepObserver& observer = {});

// Same machinery restricted to a single dataset, re-split every epoch;
// checkpoints are logged densely for training-dynamics studies.
PretrainResult train_dataset_specific(const Table& table, std::uint64_t encoder_seed,
                                      std::size_t latent_dim, const DenoiserConfig& dcfg,
                                      const TrainConfig& tcfg, const ScheduleConfig& scfg,
                                      const StepObserver& observer = {});

struct LatentFid {
    double value = 0.0;
    std::size_t pooled_dim = 0;
    std::size_t n_generated = 0;
    std::size_t n_real = 0;
};

// Frechet distance between Gaussians fitted to feature-axis-pooled latents:
// |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1 S2)^{1/2}).
LatentFid latent_fid(const LatentTensor& generated, const LatentTensor& real);

// Loads a checkpoint's parameters into a model built from `cfg`.
DenoiserModel model_from_checkpoint(const DenoiserConfig& cfg, const Checkpoint& ckpt);

struct SelectionEntry {
    std::uint64_t step = 0;
    double mean_fid = 0.0;
};

struct SelectionReport {
    std::vector<SelectionEntry> entries;
    std::size_t selected_index = 0;
};

// Scores every checkpoint by mean validation FID (generation conditioned on
// each validation context vs the true query latents) and returns the argmin,
// ties to the earliest step. Training and validation manifests must be
// disjoint (checked by task identity).
SelectionReport select_checkpoint(const std::vector<Checkpoint>& checkpoints,
                                  const DenoiserConfig& dcfg,
                                  const CorpusManifest& train_manifest,
                                  const CorpusManifest& validation_manifest,
                                  std::uint64_t encoder_seed, std::size_t latent_dim,
                                  const ScheduleConfig& scfg, std::uint64_t seed);

// Reverse-diffusion sampling: K independent trajectories initialized from
// N(0, sigma_max^2) per cell, all conditioned on one context.
LatentTensor sample_latents(const DenoiserModel& model, const LatentTensor& z_ctx, std::size_t k,
                            const ScheduleConfig& scfg, std::uint64_t seed);

struct SynthesisConfig {
    std::size_t k = 2500;
    double context_ratio = 0.3;
    std::uint64_t split_seed = 0;
    std::uint64_t noise_seed = 1;
    std::uint64_t encoder_seed = 0;
    DecoderTrainConfig decoder;
};

struct SynthesisResult {
    Table synthetic;
    std::vector<double> decoder_losses;
    std::size_t m_ctx = 0;
    std::size_t m_qry = 0;
};

// End-to-end: split -> fit stats -> encode -> sample K latents -> train
// decoders on the query side only -> decode.
SynthesisResult synthesize(const Table& table, const DenoiserModel& model,
                           const SynthesisConfig& cfg, const ScheduleConfig& scfg);

void write_training_log(const std::vector<TrainLogRecord>& log, const std::string& path);

}  // namespace icls
