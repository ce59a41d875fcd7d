#include "iclsynth/denoiser.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "iclsynth/errors.hpp"
#include "iclsynth/rng.hpp"
#include "json.hpp"

namespace icls {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

void DenoiserConfig::validate() const {
    if (latent_dim == 0 || model_dim == 0 || layers == 0 || heads == 0 ||
        ffn_hidden_multiplier == 0) {
        throw DataError("denoiser config: all dimensions must be positive");
    }
    if (model_dim % heads != 0) {
        throw DataError("denoiser config: model_dim " + std::to_string(model_dim) +
                        " not divisible by heads " + std::to_string(heads));
    }
}

DenoiserConfig paper_denoiser_config() {
    DenoiserConfig cfg;
    cfg.latent_dim = 192;
    cfg.model_dim = 512;
    cfg.layers = 6;
    cfg.heads = 8;
    return cfg;
}

AttentionMask build_mask(std::size_t m_ctx, std::size_t m_qry) {
    if (m_ctx == 0) {
        throw DataError("build_mask: query rows would have an empty attention row");
    }
    return AttentionMask{m_ctx, m_qry};
}

namespace {

constexpr double kSinusoidBase = 10000.0;

std::vector<double> sinusoid_freqs(std::size_t dim) {
    std::vector<double> freqs(dim);
    for (std::size_t k = 0; k < dim; ++k) {
        const std::size_t pair = k / 2;
        freqs[k] =
            std::pow(kSinusoidBase, -static_cast<double>(2 * pair) / static_cast<double>(dim));
    }
    return freqs;
}

// Interleaved sin/cos features of `pos`.
void sinusoid_row(double pos, const std::vector<double>& freqs, double* out) {
    for (std::size_t k = 0; k < freqs.size(); ++k) {
        out[k] = (k % 2 == 0) ? std::sin(pos * freqs[k]) : std::cos(pos * freqs[k]);
    }
}

}  // namespace

Tensor feature_pos_enc(std::size_t f_count, std::size_t dim) {
    if (dim % 2 != 0) throw DataError("feature_pos_enc: dim must be even");
    const auto freqs = sinusoid_freqs(dim);
    Tensor table({f_count, dim});
    for (std::size_t f = 0; f < f_count; ++f) {
        sinusoid_row(static_cast<double>(f), freqs, table.data() + f * dim);
    }
    return table;
}

Tensor context_pos_enc_2d(std::size_t m_ctx, std::size_t f_count, std::size_t dim) {
    if (dim % 2 != 0) throw DataError("context_pos_enc_2d: dim must be divisible by 2");
    const std::size_t half = dim / 2;
    const auto freqs = sinusoid_freqs(half);
    Tensor table({m_ctx, f_count, dim});
    std::vector<double> sample_row(half), feat_row(half);
    for (std::size_t s = 0; s < m_ctx; ++s) {
        sinusoid_row(static_cast<double>(s), freqs, sample_row.data());
        for (std::size_t f = 0; f < f_count; ++f) {
            sinusoid_row(static_cast<double>(f), freqs, feat_row.data());
            double* cell = table.data() + (s * f_count + f) * dim;
            std::copy(sample_row.begin(), sample_row.end(), cell);
            std::copy(feat_row.begin(), feat_row.end(), cell + half);
        }
    }
    return table;
}

Tensor noise_sinusoidal_features(double sigma, std::size_t dim) {
    if (!(sigma > 0.0)) throw DataError("noise_sinusoidal_features: sigma must be positive");
    const double c_noise = 0.25 * std::log(sigma);
    Tensor out({1, dim});
    sinusoid_row(c_noise, sinusoid_freqs(dim), out.data());
    return out;
}

namespace {

const char* kSublayerNames[3] = {"feat0", "feat1", "sample"};

std::vector<std::string> make_param_names(const DenoiserConfig& cfg) {
    std::vector<std::string> names = {
        "query_in.w",  "query_in.b",  "context_in.w", "context_in.b",
        "noise_mlp.w1", "noise_mlp.b1", "noise_mlp.w2", "noise_mlp.b2",
    };
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        for (const char* s : kSublayerNames) {
            const std::string prefix = "layer" + std::to_string(l) + "." + s + ".";
            for (const char* leaf :
                 {"ln.g", "ln.b", "attn.wq", "attn.bq", "attn.wk", "attn.bk", "attn.wv",
                  "attn.bv", "attn.wo", "attn.bo", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2"}) {
                names.push_back(prefix + leaf);
            }
        }
    }
    names.insert(names.end(), {"out_norm.g", "out_norm.b", "out_proj.w", "out_proj.b"});
    return names;
}

std::vector<std::size_t> param_shape(const DenoiserConfig& cfg, const std::string& name) {
    const std::size_t d = cfg.latent_dim;
    const std::size_t dm = cfg.model_dim;
    const std::size_t ffn = dm * cfg.ffn_hidden_multiplier;
    auto ends_with = [&](const char* suffix) {
        const std::size_t n = std::strlen(suffix);
        return name.size() >= n && name.compare(name.size() - n, n, suffix) == 0;
    };
    if (name == "query_in.w" || name == "context_in.w") return {d, dm};
    if (name == "query_in.b" || name == "context_in.b") return {dm};
    if (name == "noise_mlp.w1" || name == "noise_mlp.w2") return {dm, dm};
    if (name == "noise_mlp.b1" || name == "noise_mlp.b2") return {dm};
    if (name == "out_proj.w") return {dm, d};
    if (name == "out_proj.b") return {d};
    if (name == "out_norm.g" || name == "out_norm.b") return {dm};
    if (ends_with("ffn.w1")) return {dm, ffn};
    if (ends_with("ffn.b1")) return {ffn};
    if (ends_with("ffn.w2")) return {ffn, dm};
    if (ends_with("ffn.b2") || ends_with("ln.g") || ends_with("ln.b")) return {dm};
    if (ends_with(".bq") || ends_with(".bk") || ends_with(".bv") || ends_with(".bo")) return {dm};
    return {dm, dm};  // attention weight matrices
}

}  // namespace

DenoiserModel DenoiserModel::init(const DenoiserConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    DenoiserModel model;
    model.cfg_ = cfg;
    model.names_ = make_param_names(cfg);
    model.params_.reserve(model.names_.size());

    constexpr double kInitStd = 0.02;
    // Sublayer output projections start near (not exactly at) zero so the
    // residual stream dominates at init while context still influences
    // queries.
    const double resid_std =
        kInitStd / std::sqrt(2.0 * static_cast<double>(3 * cfg.layers));

    for (const std::string& name : model.names_) {
        Rng rng(mix_key(seed, std::hash<std::string>{}(name)));
        const auto shape = param_shape(cfg, name);
        const bool is_matrix = shape.size() == 2;
        const bool is_ln_gain = name.size() >= 4 && name.compare(name.size() - 4, 4, "ln.g") == 0;
        const bool is_out_norm_gain = name == "out_norm.g";
        const bool is_resid_out = name.size() >= 6 && (name.compare(name.size() - 6, 6, "ffn.w2") == 0);
        if (is_ln_gain || is_out_norm_gain) {
            model.params_.push_back(Tensor::full(shape, 1.0));
        } else if (is_matrix) {
            model.params_.push_back(
                Tensor::randn(shape, rng, is_resid_out ? resid_std : kInitStd));
        } else {
            model.params_.push_back(Tensor(shape));  // biases and ln shifts start at zero
        }
    }
    model.build_index();
    return model;
}

std::size_t DenoiserModel::parameter_count() const {
    std::size_t total = 0;
    for (const Tensor& p : params_) total += p.numel();
    return total;
}

void DenoiserModel::build_index() {
    name_index_.clear();
    for (std::size_t i = 0; i < names_.size(); ++i) name_index_[names_[i]] = i;
}

std::size_t DenoiserModel::index_of(const std::string& name) const {
    auto it = name_index_.find(name);
    if (it == name_index_.end()) throw DataError("denoiser: unknown parameter '" + name + "'");
    return it->second;
}

std::vector<Var> DenoiserModel::bind(Graph& g) const {
    std::vector<Var> bound;
    bound.reserve(params_.size());
    auto* self = const_cast<DenoiserModel*>(this);
    for (Tensor& p : self->params_) bound.push_back(g.param(&p));
    return bound;
}

Var DenoiserModel::forward(Graph& g, const std::vector<Var>& bound, Var z_sigma, double sigma,
                           Var z_ctx, const ScheduleConfig& schedule) const {
    const Tensor& zq = g.value(z_sigma);
    const Tensor& zc = g.value(z_ctx);
    if (zq.rank() != 3 || zc.rank() != 3) {
        throw ShapeError("denoiser forward: latents must be rank-3");
    }
    if (zq.dim(1) != zc.dim(1)) {
        throw ShapeError("denoiser forward: feature count mismatch, query " + zq.shape_str() +
                         " vs context " + zc.shape_str());
    }
    if (zq.dim(2) != cfg_.latent_dim || zc.dim(2) != cfg_.latent_dim) {
        throw ShapeError("denoiser forward: latent dim mismatch with config");
    }
    const std::size_t mq = zq.dim(0), f_count = zq.dim(1), mc = zc.dim(0);
    if (mc == 0) throw DataError("denoiser forward: context must be non-empty");
    const std::size_t d = cfg_.latent_dim, dm = cfg_.model_dim;
    const std::size_t mt = mc + mq;

    const PreconditionCoeffs pc = precondition(sigma, schedule);
    auto p = [&](const std::string& name) { return bound[index_of(name)]; };

    // Query path: scale by c_in, project, add feature encodings and the
    // noise embedding.
    Var xq = g.scale(z_sigma, pc.c_in);
    Var hq = g.matmul(g.reshape(xq, {mq * f_count, d}), p("query_in.w"));
    hq = g.add_bias_rows(hq, p("query_in.b"));
    Var fpe = g.constant(feature_pos_enc(f_count, dm).reshaped({f_count * dm}));
    hq = g.add_bias_rows(g.reshape(hq, {mq, f_count * dm}), fpe);

    Var sf = g.constant(noise_sinusoidal_features(sigma, dm));
    Var ne = g.add_bias_rows(g.matmul(sf, p("noise_mlp.w1")), p("noise_mlp.b1"));
    ne = g.add_bias_rows(g.matmul(g.gelu(ne), p("noise_mlp.w2")), p("noise_mlp.b2"));
    hq = g.add_bias_rows(g.reshape(hq, {mq * f_count, dm}), ne);
    hq = g.reshape(hq, {mq, f_count, dm});

    // Context path: separate projection plus 2-D encodings; never receives
    // the noise embedding.
    Var hc = g.matmul(g.reshape(z_ctx, {mc * f_count, d}), p("context_in.w"));
    hc = g.add_bias_rows(hc, p("context_in.b"));
    hc = g.reshape(hc, {mc, f_count, dm});
    hc = g.add(hc, g.constant(context_pos_enc_2d(mc, f_count, dm)));

    // Joint stream, context rows first.
    Var h = g.concat_axis0(hc, hq);

    auto sublayer = [&](Var input, const std::string& prefix, std::size_t kv_begin,
                        std::size_t kv_end) {
        Var t = g.layer_norm(input, p(prefix + "ln.g"), p(prefix + "ln.b"));
        Var a = g.multi_head_attention(t, p(prefix + "attn.wq"), p(prefix + "attn.bq"),
                                       p(prefix + "attn.wk"), p(prefix + "attn.bk"),
                                       p(prefix + "attn.wv"), p(prefix + "attn.bv"),
                                       p(prefix + "attn.wo"), p(prefix + "attn.bo"), cfg_.heads,
                                       kv_begin, kv_end);
        const std::vector<std::size_t> a_shape = g.value(a).shape();
        const std::size_t rows = a_shape[0] * a_shape[1];
        Var f1 = g.gelu(g.add_bias_rows(g.matmul(g.reshape(a, {rows, dm}), p(prefix + "ffn.w1")),
                                        p(prefix + "ffn.b1")));
        Var f2 = g.add_bias_rows(g.matmul(f1, p(prefix + "ffn.w2")), p(prefix + "ffn.b2"));
        return g.add(input, g.reshape(f2, a_shape));
    };

    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string base = "layer" + std::to_string(l) + ".";
        // Two feature-wise sublayers: tokens along the feature axis.
        h = sublayer(h, base + "feat0.", 0, f_count);
        h = sublayer(h, base + "feat1.", 0, f_count);
        // One sample-wise sublayer: tokens along the sample axis with the
        // context/query visibility rule (everyone attends the context span).
        Var ht = g.transpose01(h);  // (F, Mt, D)
        ht = sublayer(ht, base + "sample.", 0, mc);
        h = g.transpose01(ht);
    }

    Var out = g.slice_axis0(h, mc, mt);  // retain query representations
    out = g.layer_norm(out, p("out_norm.g"), p("out_norm.b"));
    Var net = g.matmul(g.reshape(out, {mq * f_count, dm}), p("out_proj.w"));
    net = g.add_bias_rows(net, p("out_proj.b"));
    net = g.reshape(net, {mq, f_count, d});

    return g.add(g.scale(z_sigma, pc.c_skip), g.scale(net, pc.c_out));
}

Tensor DenoiserModel::denoise(const Tensor& z_sigma, double sigma, const Tensor& z_ctx,
                              const ScheduleConfig& schedule) const {
    Graph g(false);
    std::vector<Var> bound = bind(g);
    Var out = forward(g, bound, g.constant(z_sigma), sigma, g.constant(z_ctx), schedule);
    return g.value(out);
}

namespace {

constexpr char kCheckpointMagic[8] = {'I', 'C', 'L', 'S', 'C', 'K', 'P', '1'};

json config_to_json(const DenoiserConfig& cfg) {
    return json{{"latent_dim", cfg.latent_dim},
                {"model_dim", cfg.model_dim},
                {"layers", cfg.layers},
                {"heads", cfg.heads},
                {"ffn_hidden_multiplier", cfg.ffn_hidden_multiplier}};
}

DenoiserConfig config_from_json(const json& j) {
    DenoiserConfig cfg;
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.model_dim = j.at("model_dim").get<std::size_t>();
    cfg.layers = j.at("layers").get<std::size_t>();
    cfg.heads = j.at("heads").get<std::size_t>();
    cfg.ffn_hidden_multiplier = j.at("ffn_hidden_multiplier").get<std::size_t>();
    cfg.validate();
    return cfg;
}

}  // namespace

void DenoiserModel::save_checkpoint(const std::string& path, std::uint64_t step) const {
    json manifest = json::array();
    std::uint64_t offset = 0;  // in doubles, from the start of the blob
    for (std::size_t i = 0; i < params_.size(); ++i) {
        manifest.push_back(
            {{"name", names_[i]}, {"shape", params_[i].shape()}, {"offset", offset}});
        offset += params_[i].numel();
    }
    json header;
    header["format_version"] = 1;
    header["config"] = config_to_json(cfg_);
    header["step"] = step;
    header["params"] = std::move(manifest);
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("save_checkpoint: cannot open '" + path + "'");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    const std::uint32_t version = 1;
    const std::uint64_t header_len = header_text.size();
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const Tensor& p : params_) {
        out.write(reinterpret_cast<const char*>(p.data()),
                  static_cast<std::streamsize>(p.numel() * sizeof(double)));
    }
    if (!out) throw DataError("save_checkpoint: write failed for '" + path + "'");

    json sidecar;
    sidecar["config"] = config_to_json(cfg_);
    sidecar["step"] = step;
    std::ofstream side(path + ".json", std::ios::binary);
    side << sidecar.dump(2) << '\n';
}

DenoiserModel DenoiserModel::load_checkpoint(const std::string& path, std::uint64_t* step_out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("load_checkpoint: cannot open '" + path + "'");
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
        throw DataError("load_checkpoint: bad magic in '" + path + "'");
    }
    std::uint32_t version = 0;
    std::uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    if (!in || version != 1) throw DataError("load_checkpoint: unsupported format version");
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) throw DataError("load_checkpoint: truncated header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw DataError(std::string("load_checkpoint: bad header JSON: ") + e.what());
    }

    DenoiserModel model;
    model.cfg_ = config_from_json(header.at("config"));
    for (const json& entry : header.at("params")) {
        model.names_.push_back(entry.at("name").get<std::string>());
        const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
        Tensor p(shape);
        in.read(reinterpret_cast<char*>(p.data()),
                static_cast<std::streamsize>(p.numel() * sizeof(double)));
        if (!in) throw DataError("load_checkpoint: truncated parameter data");
        model.params_.push_back(std::move(p));
    }
    const auto expected = make_param_names(model.cfg_);
    if (model.names_ != expected) {
        throw DataError("load_checkpoint: parameter manifest does not match config");
    }
    model.build_index();
    if (step_out != nullptr) *step_out = header.at("step").get<std::uint64_t>();
    return model;
}

}  // namespace icls
