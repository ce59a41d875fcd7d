#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "iclsynth/autodiff.hpp"
#include "iclsynth/schedule.hpp"
#include "iclsynth/tensor.hpp"

namespace icls {

struct DenoiserConfig {
    std::size_t latent_dim = 32;   // d
    std::size_t model_dim = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_hidden_multiplier = 4;

    void validate() const;
    bool operator==(const DenoiserConfig&) const = default;
};

// Full-scale configuration (d=192, model 512, 6 layers, 8 heads).
DenoiserConfig paper_denoiser_config();

// Boolean sample-axis attention pattern over M_ctx + M_qry row tokens:
// context rows attend context, query rows attend only context.
struct AttentionMask {
    std::size_t m_ctx = 0;
    std::size_t m_qry = 0;

    bool allowed(std::size_t /*row*/, std::size_t col) const { return col < m_ctx; }
    std::size_t allowed_count() const { return m_ctx * (m_ctx + m_qry); }
};

AttentionMask build_mask(std::size_t m_ctx, std::size_t m_qry);

// 1-D sinusoidal table over positions (F x dim); dim must be even.
Tensor feature_pos_enc(std::size_t f_count, std::size_t dim);

// 2-D table (M x F x dim): first half of channels encodes the sample index,
// second half the feature index.
Tensor context_pos_enc_2d(std::size_t m_ctx, std::size_t f_count, std::size_t dim);

// Sinusoidal features of c_noise(sigma) = ln(sigma)/4.
Tensor noise_sinusoidal_features(double sigma, std::size_t dim);

// The dual-axis attention denoiser. Parameters live in a flat named list so
// checkpoints can carry an explicit manifest.
class DenoiserModel {
public:
    static DenoiserModel init(const DenoiserConfig& cfg, std::uint64_t seed);

    const DenoiserConfig& config() const { return cfg_; }
    std::size_t parameter_count() const;
    const std::vector<Tensor>& parameters() const { return params_; }
    std::vector<Tensor>& parameters() { return params_; }
    const std::vector<std::string>& parameter_names() const { return names_; }

    // Differentiable forward pass. z_sigma is (M_qry x F x d) at noise level
    // sigma, z_ctx is (M_ctx x F x d); the result is the denoised estimate
    // D_theta = c_skip * z_sigma + c_out * N_theta(c_in * z_sigma, ...).
    // `bound` must come from bind(graph).
    Var forward(Graph& g, const std::vector<Var>& bound, Var z_sigma, double sigma, Var z_ctx,
                const ScheduleConfig& schedule) const;

    std::vector<Var> bind(Graph& g) const;

    // Convenience non-differentiable evaluation.
    Tensor denoise(const Tensor& z_sigma, double sigma, const Tensor& z_ctx,
                   const ScheduleConfig& schedule) const;

    // Versioned binary checkpoint with a parameter manifest, plus a sidecar
    // JSON copy of the config at path + ".json".
    void save_checkpoint(const std::string& path, std::uint64_t step) const;
    static DenoiserModel load_checkpoint(const std::string& path, std::uint64_t* step_out = nullptr);

private:
    DenoiserConfig cfg_;
    std::vector<Tensor> params_;
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> name_index_;

    void build_index();
    std::size_t index_of(const std::string& name) const;
};

}  // namespace icls
