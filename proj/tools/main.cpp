// Command-line surface: corpus generation, pretraining, synthesis,
// evaluation, frontier studies, ablations, and report aggregation.
//
// Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerical
// failure.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "iclsynth/corpus.hpp"
#include "iclsynth/denoiser.hpp"
#include "iclsynth/encdec.hpp"
#include "iclsynth/errors.hpp"
#include "iclsynth/learners.hpp"
#include "iclsynth/metrics.hpp"
#include "iclsynth/pipeline.hpp"
#include "iclsynth/table.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace icls;

namespace {

json load_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw UsageError("config: cannot open '" + path + "'");
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: invalid JSON: ") + e.what());
    }
}

// Precedence: defaults <- config file <- explicit flags.
template <typename T>
void resolve(CLI::App* sub, const char* flag, const json& cfg, const char* key, T& value) {
    if (sub->count(flag) > 0) return;
    if (cfg.contains(key)) {
        try {
            value = cfg.at(key).get<T>();
        } catch (const json::exception& e) {
            throw UsageError(std::string("config: field '") + key + "': " + e.what());
        }
    }
}

void write_json_file(const json& j, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
}

Table load_table(const std::string& csv, const std::string& schema_path) {
    return read_csv(csv, read_schema(schema_path));
}

// Seeded train/val/test partition used by frontier and ablation runs.
struct EvalSplits {
    Table train;
    Table val;
    Table test;
};

EvalSplits make_eval_splits(const Table& data, std::size_t n_train, std::uint64_t seed) {
    const std::size_t n = data.n_rows();
    if (n < 2 * n_train + 2) {
        throw DataError("dataset too small: need at least " + std::to_string(2 * n_train + 2) +
                        " rows for train/val/test with n=" + std::to_string(n_train));
    }
    Rng rng(mix_key(seed, 0x65766c73ULL));
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    rng.shuffle(order);
    auto take = [&](std::size_t from, std::size_t to) {
        std::vector<std::size_t> idx(order.begin() + static_cast<long>(from),
                                     order.begin() + static_cast<long>(to));
        std::sort(idx.begin(), idx.end());
        return data.select_rows(idx);
    };
    return {take(0, n_train), take(n_train, 2 * n_train), take(2 * n_train, n)};
}

struct PresetValues {
    std::size_t epochs;
    std::size_t latent_dim;
    std::size_t model_dim;
    std::size_t layers;
    std::size_t heads;
    std::size_t decoder_hidden;
    double decoder_lr;
    std::size_t decoder_epochs;
};

PresetValues preset_values(const std::string& preset) {
    if (preset == "desk") return {200, 32, 64, 2, 4, 128, 1e-2, 600};
    if (preset == "paper") return {20000, 192, 512, 6, 8, 768, 2e-5, 20000};
    throw UsageError("unknown preset '" + preset + "' (expected desk or paper)");
}

// ---------------------------------------------------------------------------
// corpus
// ---------------------------------------------------------------------------

struct CorpusOpts {
    std::string manifest_path;
    std::string out_dir;
    std::size_t variants = 5;
    bool no_permute = false;
    std::uint64_t seed = 0;
    std::string config;
};

int cmd_corpus(CLI::App* sub, CorpusOpts& o) {
    const json cfg = load_config_file(o.config);
    resolve(sub, "--variants", cfg, "variants", o.variants);
    resolve(sub, "--no-permute", cfg, "no_permute", o.no_permute);
    resolve(sub, "--seed", cfg, "seed", o.seed);

    const CorpusManifest manifest = CorpusManifest::load(o.manifest_path);
    const std::size_t variants = o.no_permute ? 1 : o.variants;
    materialize_corpus(manifest, o.out_dir, variants, !o.no_permute, o.seed);
    manifest.save((fs::path(o.out_dir) / "manifest.json").string());

    json run;
    run["command"] = "corpus";
    run["manifest"] = o.manifest_path;
    run["out"] = o.out_dir;
    run["variants"] = variants;
    run["no_permute"] = o.no_permute;
    run["seed"] = o.seed;
    write_json_file(run, (fs::path(o.out_dir) / "runconfig.json").string());
    std::cout << "corpus: " << manifest.tasks.size() << " tasks x " << variants
              << " variants -> " << o.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// pretrain
// ---------------------------------------------------------------------------

struct PretrainOpts {
    std::string corpus_dir;
    std::string out_dir;
    std::string preset = "desk";
    std::size_t epochs = 0;  // 0 = preset value
    double lr = 2e-4;
    double warmup = 0.05;
    std::size_t cap = 128;
    double ctx_min = 0.2;
    double ctx_max = 0.5;
    std::uint64_t seed = 0;
    std::uint64_t encoder_seed = 0;
    std::size_t checkpoint_every = 0;
    std::string val_manifest;
    std::string config;
};

std::vector<Table> read_corpus_dir(const std::string& dir) {
    std::vector<fs::path> task_dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) task_dirs.push_back(entry.path());
    }
    std::sort(task_dirs.begin(), task_dirs.end());
    std::vector<Table> tables;
    for (const fs::path& task_dir : task_dirs) {
        std::vector<fs::path> csvs;
        for (const auto& entry : fs::directory_iterator(task_dir)) {
            if (entry.path().extension() == ".csv") csvs.push_back(entry.path());
        }
        std::sort(csvs.begin(), csvs.end());
        for (const fs::path& csv : csvs) {
            fs::path schema = csv;
            schema.replace_extension(".schema.json");
            tables.push_back(load_table(csv.string(), schema.string()));
        }
    }
    if (tables.empty()) throw DataError("corpus directory '" + dir + "' holds no datasets");
    return tables;
}

int cmd_pretrain(CLI::App* sub, PretrainOpts& o) {
    const json cfg = load_config_file(o.config);
    resolve(sub, "--preset", cfg, "preset", o.preset);
    const PresetValues preset = preset_values(o.preset);
    if (sub->count("--epochs") == 0 && !cfg.contains("epochs")) o.epochs = preset.epochs;
    resolve(sub, "--epochs", cfg, "epochs", o.epochs);
    resolve(sub, "--lr", cfg, "lr", o.lr);
    resolve(sub, "--warmup", cfg, "warmup", o.warmup);
    resolve(sub, "--cap", cfg, "cap", o.cap);
    resolve(sub, "--ctx-min", cfg, "ctx_min", o.ctx_min);
    resolve(sub, "--ctx-max", cfg, "ctx_max", o.ctx_max);
    resolve(sub, "--seed", cfg, "seed", o.seed);
    resolve(sub, "--encoder-seed", cfg, "encoder_seed", o.encoder_seed);
    resolve(sub, "--checkpoint-every", cfg, "checkpoint_every", o.checkpoint_every);
    resolve(sub, "--val-manifest", cfg, "val_manifest", o.val_manifest);

    DenoiserConfig dcfg;
    dcfg.latent_dim = preset.latent_dim;
    dcfg.model_dim = preset.model_dim;
    dcfg.layers = preset.layers;
    dcfg.heads = preset.heads;

    TrainConfig tcfg;
    tcfg.lr = o.lr;
    tcfg.warmup_ratio = o.warmup;
    tcfg.epochs = o.epochs;
    tcfg.batch_query_cap = o.cap;
    tcfg.context_ratio_min = o.ctx_min;
    tcfg.context_ratio_max = o.ctx_max;
    tcfg.seed = o.seed;
    tcfg.checkpoint_every = o.checkpoint_every;
    ScheduleConfig scfg;

    const std::vector<Table> tables = read_corpus_dir(o.corpus_dir);
    fs::create_directories(o.out_dir);

    const PretrainResult result =
        pretrain_tables(tables, o.encoder_seed, dcfg.latent_dim, dcfg, tcfg, scfg);

    for (const Checkpoint& ckpt : result.checkpoints) {
        const DenoiserModel model = model_from_checkpoint(dcfg, ckpt);
        model.save_checkpoint(
            (fs::path(o.out_dir) / ("ckpt_" + std::to_string(ckpt.step) + ".bin")).string(),
            ckpt.step);
    }
    write_training_log(result.log, (fs::path(o.out_dir) / "train_log.jsonl").string());

    json run;
    run["command"] = "pretrain";
    run["corpus"] = o.corpus_dir;
    run["out"] = o.out_dir;
    run["preset"] = o.preset;
    run["epochs"] = o.epochs;
    run["lr"] = o.lr;
    run["warmup"] = o.warmup;
    run["cap"] = o.cap;
    run["ctx_min"] = o.ctx_min;
    run["ctx_max"] = o.ctx_max;
    run["seed"] = o.seed;
    run["encoder_seed"] = o.encoder_seed;
    run["checkpoint_every"] = o.checkpoint_every;
    run["val_manifest"] = o.val_manifest;
    run["latent_dim"] = dcfg.latent_dim;
    run["model_dim"] = dcfg.model_dim;
    run["layers"] = dcfg.layers;
    run["heads"] = dcfg.heads;

    if (!o.val_manifest.empty()) {
        const CorpusManifest train_manifest =
            CorpusManifest::load((fs::path(o.corpus_dir) / "manifest.json").string());
        const CorpusManifest val_manifest = CorpusManifest::load(o.val_manifest);
        const SelectionReport sel =
            select_checkpoint(result.checkpoints, dcfg, train_manifest, val_manifest,
                              o.encoder_seed, dcfg.latent_dim, scfg, o.seed);
        json sel_json;
        sel_json["selected_step"] = sel.entries[sel.selected_index].step;
        sel_json["selected_checkpoint"] =
            "ckpt_" + std::to_string(sel.entries[sel.selected_index].step) + ".bin";
        json entries = json::array();
        for (const SelectionEntry& e : sel.entries) {
            entries.push_back({{"step", e.step}, {"mean_fid", e.mean_fid}});
        }
        sel_json["entries"] = std::move(entries);
        write_json_file(sel_json, (fs::path(o.out_dir) / "selection.json").string());
        std::cout << "pretrain: selected checkpoint step "
                  << sel.entries[sel.selected_index].step << "\n";
    }

    write_json_file(run, (fs::path(o.out_dir) / "runconfig.json").string());
    std::cout << "pretrain: " << result.log.size() << " steps, "
              << result.checkpoints.size() << " checkpoints -> " << o.out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOpts {
    std::string checkpoint;
    std::string data;
    std::string schema;
    std::string out;
    std::size_t k = 2500;
    double ratio = 0.3;
    std::uint64_t seed = 0;
    std::uint64_t encoder_seed = 0;
    std::size_t decoder_epochs = 600;
    std::size_t decoder_hidden = 128;
    double decoder_lr = 1e-2;
    std::string config;
};

int cmd_synth(CLI::App* sub, SynthOpts& o) {
    const json cfg = load_config_file(o.config);
    resolve(sub, "--k", cfg, "k", o.k);
    resolve(sub, "--ratio", cfg, "ratio", o.ratio);
    resolve(sub, "--seed", cfg, "seed", o.seed);
    resolve(sub, "--encoder-seed", cfg, "encoder_seed", o.encoder_seed);
    resolve(sub, "--decoder-epochs", cfg, "decoder_epochs", o.decoder_epochs);
    resolve(sub, "--decoder-hidden", cfg, "decoder_hidden", o.decoder_hidden);
    resolve(sub, "--decoder-lr", cfg, "decoder_lr", o.decoder_lr);

    const DenoiserModel model = DenoiserModel::load_checkpoint(o.checkpoint);
    const Table data = load_table(o.data, o.schema);
    ScheduleConfig scfg;

    SynthesisConfig syn_cfg;
    syn_cfg.k = o.k;
    syn_cfg.context_ratio = o.ratio;
    syn_cfg.split_seed = mix_key(o.seed, 1);
    syn_cfg.noise_seed = mix_key(o.seed, 2);
    syn_cfg.encoder_seed = o.encoder_seed;
    syn_cfg.decoder.hidden = o.decoder_hidden;
    syn_cfg.decoder.epochs = o.decoder_epochs;
    syn_cfg.decoder.lr = o.decoder_lr;
    syn_cfg.decoder.seed = mix_key(o.seed, 3);

    const SynthesisResult result = synthesize(data, model, syn_cfg, scfg);
    write_csv(result.synthetic, o.out);

    json meta;
    meta["k"] = o.k;
    meta["ratio"] = o.ratio;
    meta["seed"] = o.seed;
    meta["encoder_seed"] = o.encoder_seed;
    meta["m_ctx"] = result.m_ctx;
    meta["m_qry"] = result.m_qry;
    meta["decoder_losses"] = result.decoder_losses;
    write_json_file(meta, o.out + ".meta.json");

    json run;
    run["command"] = "synth";
    run["checkpoint"] = o.checkpoint;
    run["data"] = o.data;
    run["schema"] = o.schema;
    run["out"] = o.out;
    run["k"] = o.k;
    run["ratio"] = o.ratio;
    run["seed"] = o.seed;
    run["encoder_seed"] = o.encoder_seed;
    run["decoder_epochs"] = o.decoder_epochs;
    run["decoder_hidden"] = o.decoder_hidden;
    run["decoder_lr"] = o.decoder_lr;
    write_json_file(run, o.out + ".runconfig.json");
    std::cout << "synth: " << result.synthetic.n_rows() << " rows -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::string syn;
    std::string train;
    std::string val;
    std::string test;
    std::string schema;
    std::string out;
    std::string dataset = "dataset";
    std::string method = "method";
    std::uint64_t seed_id = 0;
    std::string config;
};

int cmd_eval(CLI::App* sub, EvalOpts& o) {
    const json cfg = load_config_file(o.config);
    resolve(sub, "--dataset", cfg, "dataset", o.dataset);
    resolve(sub, "--method", cfg, "method", o.method);
    resolve(sub, "--seed-id", cfg, "seed_id", o.seed_id);

    const TableSchema schema = read_schema(o.schema);
    const Table syn = read_csv(o.syn, schema);
    const Table train = read_csv(o.train, schema);
    const Table test = read_csv(o.test, schema);
    Table val;
    const bool has_val = !o.val.empty();
    if (has_val) val = read_csv(o.val, schema);

    const MetricReport report = evaluate_tables(syn, train, has_val ? &val : nullptr, test,
                                                o.dataset, o.method, o.seed_id);
    const std::string text = report.to_json_string();
    validate_report_json(text);
    std::ofstream out(o.out, std::ios::binary);
    if (!out) throw DataError("cannot open '" + o.out + "' for writing");
    out << text << '\n';

    json run;
    run["command"] = "eval";
    run["syn"] = o.syn;
    run["train"] = o.train;
    run["val"] = o.val;
    run["test"] = o.test;
    run["schema"] = o.schema;
    run["out"] = o.out;
    run["dataset"] = o.dataset;
    run["method"] = o.method;
    run["seed_id"] = o.seed_id;
    write_json_file(run, o.out + ".runconfig.json");
    std::cout << "eval: report -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// frontier
// ---------------------------------------------------------------------------

struct FrontierOpts {
    std::string data;
    std::string schema;
    std::string mode;
    std::string out;
    std::string checkpoint;  // icl mode
    std::size_t n = 200;
    std::size_t k = 400;
    std::size_t epochs = 1500;
    std::uint64_t seed = 0;
    std::uint64_t encoder_seed = 0;
    std::string config;
};

int cmd_frontier(CLI::App* sub, FrontierOpts& o) {
    const json cfg = load_config_file(o.config);
    resolve(sub, "--n", cfg, "n", o.n);
    resolve(sub, "--k", cfg, "k", o.k);
    resolve(sub, "--epochs", cfg, "epochs", o.epochs);
    resolve(sub, "--seed", cfg, "seed", o.seed);
    resolve(sub, "--encoder-seed", cfg, "encoder_seed", o.encoder_seed);
    resolve(sub, "--checkpoint", cfg, "checkpoint", o.checkpoint);
    if (o.mode != "dataset_specific" && o.mode != "icl") {
        throw UsageError("frontier: mode must be dataset_specific or icl");
    }
    if (o.mode == "icl" && o.checkpoint.empty()) {
        throw UsageError("frontier --mode icl needs --checkpoint");
    }

    const Table data = load_table(o.data, o.schema);
    const EvalSplits splits = make_eval_splits(data, o.n, o.seed);
    ScheduleConfig scfg;

    std::ofstream out(o.out, std::ios::binary);
    if (!out) throw DataError("cannot open '" + o.out + "' for writing");
    out << "step_or_ratio,quality,privacy\n";

    auto emit_point = [&](double step_or_ratio, const Table& syn) {
        const double quality = utility(syn, splits.test, LearnerKind::BoostedStumps);
        const double privacy = dcr_overfit(syn, splits.train, splits.val).score;
        out << format_double(step_or_ratio) << ',' << format_double(quality) << ','
            << format_double(privacy) << '\n';
    };

    if (o.mode == "dataset_specific") {
        DenoiserConfig dcfg;  // desk-scale model
        TrainConfig tcfg;
        tcfg.epochs = o.epochs;
        tcfg.seed = o.seed;
        const PretrainResult run = train_dataset_specific(splits.train, o.encoder_seed,
                                                          dcfg.latent_dim, dcfg, tcfg, scfg);
        for (const Checkpoint& ckpt : run.checkpoints) {
            const DenoiserModel model = model_from_checkpoint(dcfg, ckpt);
            SynthesisConfig syn_cfg;
            syn_cfg.k = o.k;
            syn_cfg.context_ratio = 0.3;
            syn_cfg.split_seed = mix_key(o.seed, ckpt.step, 1);
            syn_cfg.noise_seed = mix_key(o.seed, ckpt.step, 2);
            syn_cfg.encoder_seed = o.encoder_seed;
            syn_cfg.decoder = desk_decoder_config();
            syn_cfg.decoder.seed = mix_key(o.seed, ckpt.step, 3);
            const SynthesisResult res = synthesize(splits.train, model, syn_cfg, scfg);
            emit_point(static_cast<double>(ckpt.step), res.synthetic);
        }
    } else {
        const DenoiserModel model = DenoiserModel::load_checkpoint(o.checkpoint);
        for (int ri = 2; ri <= 8; ++ri) {
            const double r = 0.1 * static_cast<double>(ri);
            SynthesisConfig syn_cfg;
            syn_cfg.k = o.k;
            syn_cfg.context_ratio = r;
            syn_cfg.split_seed = mix_key(o.seed, static_cast<std::uint64_t>(ri), 1);
            syn_cfg.noise_seed = mix_key(o.seed, static_cast<std::uint64_t>(ri), 2);
            syn_cfg.encoder_seed = o.encoder_seed;
            syn_cfg.decoder = desk_decoder_config();
            syn_cfg.decoder.seed = mix_key(o.seed, static_cast<std::uint64_t>(ri), 3);
            const SynthesisResult res = synthesize(splits.train, model, syn_cfg, scfg);
            emit_point(r, res.synthetic);
        }
    }

    json run;
    run["command"] = "frontier";
    run["data"] = o.data;
    run["schema"] = o.schema;
    run["mode"] = o.mode;
    run["out"] = o.out;
    run["checkpoint"] = o.checkpoint;
    run["n"] = o.n;
    run["k"] = o.k;
    run["epochs"] = o.epochs;
    run["seed"] = o.seed;
    run["encoder_seed"] = o.encoder_seed;
    write_json_file(run, o.out + ".runconfig.json");
    std::cout << "frontier: " << o.mode << " -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

struct AblateOpts {
    std::string data;
    std::string schema;
    std::string variant;
    std::string out;
    std::string manifest;  // variant N
    std::size_t n = 200;
    std::size_t k = 400;
    std::size_t epochs = 1000;
    std::uint64_t seed = 0;
    std::uint64_t encoder_seed = 0;
    std::string dataset = "dataset";
    std::string config;
};

int cmd_ablate(CLI::App* sub, AblateOpts& o) {
    const json cfg = load_config_file(o.config);
    resolve(sub, "--n", cfg, "n", o.n);
    resolve(sub, "--k", cfg, "k", o.k);
    resolve(sub, "--epochs", cfg, "epochs", o.epochs);
    resolve(sub, "--seed", cfg, "seed", o.seed);
    resolve(sub, "--encoder-seed", cfg, "encoder_seed", o.encoder_seed);
    resolve(sub, "--manifest", cfg, "manifest", o.manifest);
    resolve(sub, "--dataset", cfg, "dataset", o.dataset);

    const Table data = load_table(o.data, o.schema);
    const EvalSplits splits = make_eval_splits(data, o.n, o.seed);
    ScheduleConfig scfg;
    DenoiserConfig dcfg;  // desk scale
    TrainConfig tcfg;
    tcfg.epochs = o.epochs;
    tcfg.seed = o.seed;

    PretrainResult run_result;
    std::string method;
    if (o.variant == "S") {
        // Pretraining restricted to the single target dataset.
        run_result = train_dataset_specific(splits.train, o.encoder_seed, dcfg.latent_dim, dcfg,
                                            tcfg, scfg);
        method = "icl_single_dataset";
    } else if (o.variant == "N") {
        if (o.manifest.empty()) throw UsageError("ablate --variant N needs --manifest");
        const CorpusManifest manifest = CorpusManifest::load(o.manifest);
        // Same corpus without permutation expansion: one identity variant.
        run_result = pretrain(manifest, 1, false, o.encoder_seed, dcfg.latent_dim, dcfg, tcfg,
                              scfg);
        method = "icl_no_permutation";
    } else {
        throw UsageError("ablate: variant must be S or N");
    }

    const DenoiserModel model = model_from_checkpoint(dcfg, run_result.checkpoints.back());
    SynthesisConfig syn_cfg;
    syn_cfg.k = o.k;
    syn_cfg.context_ratio = 0.3;
    syn_cfg.split_seed = mix_key(o.seed, 11);
    syn_cfg.noise_seed = mix_key(o.seed, 12);
    syn_cfg.encoder_seed = o.encoder_seed;
    syn_cfg.decoder = desk_decoder_config();
    syn_cfg.decoder.seed = mix_key(o.seed, 13);
    const SynthesisResult res = synthesize(splits.train, model, syn_cfg, scfg);

    const MetricReport report = evaluate_tables(res.synthetic, splits.train, &splits.val,
                                                splits.test, o.dataset, method, o.seed);
    const std::string text = report.to_json_string();
    validate_report_json(text);
    std::ofstream out_file(o.out, std::ios::binary);
    if (!out_file) throw DataError("cannot open '" + o.out + "' for writing");
    out_file << text << '\n';

    json run;
    run["command"] = "ablate";
    run["data"] = o.data;
    run["schema"] = o.schema;
    run["variant"] = o.variant;
    run["out"] = o.out;
    run["manifest"] = o.manifest;
    run["n"] = o.n;
    run["k"] = o.k;
    run["epochs"] = o.epochs;
    run["seed"] = o.seed;
    run["encoder_seed"] = o.encoder_seed;
    run["dataset"] = o.dataset;
    write_json_file(run, o.out + ".runconfig.json");
    std::cout << "ablate " << o.variant << ": report -> " << o.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOpts {
    std::vector<std::string> inputs;
    std::string out_dir;
    std::string config;
};

int cmd_report(CLI::App*, ReportOpts& o) {
    if (o.inputs.empty()) throw UsageError("report: at least one input report required");
    std::vector<MetricReport> reports;
    for (const std::string& path : o.inputs) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("report: cannot open '" + path + "'");
        std::stringstream ss;
        ss << in.rdbuf();
        reports.push_back(MetricReport::from_json_string(ss.str()));
    }
    fs::create_directories(o.out_dir);

    // Canonical metric order: sorted union of available metric names.
    std::set<std::string> metric_set;
    for (const MetricReport& r : reports) {
        for (const auto& [k, v] : r.values) metric_set.insert(k);
    }
    const std::vector<std::string> metrics(metric_set.begin(), metric_set.end());

    // Aggregate mean +- std per (dataset, method, metric), std over seeds.
    {
        std::map<std::string, std::vector<double>> cells;
        for (const MetricReport& r : reports) {
            for (const auto& [k, v] : r.values) {
                cells[r.dataset + "," + r.method + "," + k].push_back(v);
            }
        }
        std::ofstream out(fs::path(o.out_dir) / "aggregate.csv", std::ios::binary);
        out << "dataset,method,metric,mean,std,n\n";
        for (const auto& [key, values] : cells) {
            double mean = 0.0;
            for (double v : values) mean += v;
            mean /= static_cast<double>(values.size());
            double var = 0.0;
            for (double v : values) var += (v - mean) * (v - mean);
            var /= static_cast<double>(values.size());
            out << key << ',' << format_double(mean) << ',' << format_double(std::sqrt(var))
                << ',' << values.size() << '\n';
        }
    }

    // z-score within (dataset, metric) over all (method, seed) instances.
    std::map<std::string, std::vector<double>> groups;
    std::map<std::string, std::vector<std::size_t>> group_members;  // report index
    for (std::size_t i = 0; i < reports.size(); ++i) {
        for (const auto& [k, v] : reports[i].values) {
            const std::string key = reports[i].dataset + "|" + k;
            groups[key].push_back(v);
            group_members[key].push_back(i);
        }
    }
    const ZScoreResult z = zscore_normalize(groups);

    // Per-instance normalized metric vectors, concatenated across datasets.
    std::vector<std::vector<double>> points(
        reports.size(),
        std::vector<double>(metrics.size(), std::numeric_limits<double>::quiet_NaN()));
    for (const auto& [key, zvalues] : z.groups) {
        const std::string metric = key.substr(key.find('|') + 1);
        const auto mit = std::find(metrics.begin(), metrics.end(), metric);
        const std::size_t mcol = static_cast<std::size_t>(mit - metrics.begin());
        const auto& members = group_members.at(key);
        for (std::size_t j = 0; j < members.size(); ++j) {
            points[members[j]][mcol] = zvalues[j];
        }
    }

    {
        std::ofstream out(fs::path(o.out_dir) / "zscores.csv", std::ios::binary);
        out << "dataset,method,seed";
        for (const std::string& m : metrics) out << ',' << m;
        out << '\n';
        for (std::size_t i = 0; i < reports.size(); ++i) {
            out << reports[i].dataset << ',' << reports[i].method << ',' << reports[i].seed;
            for (std::size_t m = 0; m < metrics.size(); ++m) {
                out << ',';
                if (std::isfinite(points[i][m])) out << format_double(points[i][m]);
            }
            out << '\n';
        }
    }

    if (reports.size() >= 3) {
        const CorrelationResult corr = correlation_matrix(metrics, points);
        auto write_matrix = [&](const Tensor& m, const std::string& name) {
            std::ofstream out(fs::path(o.out_dir) / name, std::ios::binary);
            out << "metric";
            for (const std::string& s : metrics) out << ',' << s;
            out << '\n';
            for (std::size_t i = 0; i < metrics.size(); ++i) {
                out << metrics[i];
                for (std::size_t j = 0; j < metrics.size(); ++j) {
                    out << ',';
                    if (std::isfinite(m.at(i, j))) out << format_double(m.at(i, j));
                }
                out << '\n';
            }
        };
        write_matrix(corr.pearson, "correlation_pearson.csv");
        write_matrix(corr.spearman, "correlation_spearman.csv");
    }

    json run;
    run["command"] = "report";
    run["inputs"] = o.inputs;
    run["out_dir"] = o.out_dir;
    write_json_file(run, (fs::path(o.out_dir) / "runconfig.json").string());
    std::cout << "report: " << reports.size() << " inputs -> " << o.out_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"In-context latent diffusion for tabular data synthesis"};
    app.require_subcommand(1);

    CorpusOpts corpus_opts;
    CLI::App* corpus_cmd = app.add_subcommand("corpus", "Materialize a procedural corpus");
    corpus_cmd->add_option("--manifest", corpus_opts.manifest_path, "Task manifest JSON")
        ->required();
    corpus_cmd->add_option("--out", corpus_opts.out_dir, "Output directory")->required();
    corpus_cmd->add_option("--variants", corpus_opts.variants, "Permutation variants per task");
    corpus_cmd->add_flag("--no-permute", corpus_opts.no_permute,
                         "Single identity variant per task");
    corpus_cmd->add_option("--seed", corpus_opts.seed, "Permutation seed");
    corpus_cmd->add_option("--config", corpus_opts.config, "Config file (JSON)");

    PretrainOpts pre_opts;
    CLI::App* pre_cmd = app.add_subcommand("pretrain", "Pretrain the conditional denoiser");
    pre_cmd->add_option("--corpus", pre_opts.corpus_dir, "Materialized corpus directory")
        ->required();
    pre_cmd->add_option("--out", pre_opts.out_dir, "Output directory")->required();
    pre_cmd->add_option("--preset", pre_opts.preset, "desk or paper");
    pre_cmd->add_option("--epochs", pre_opts.epochs, "Training epochs");
    pre_cmd->add_option("--lr", pre_opts.lr, "Peak learning rate");
    pre_cmd->add_option("--warmup", pre_opts.warmup, "Warmup ratio");
    pre_cmd->add_option("--cap", pre_opts.cap, "Query batch cap");
    pre_cmd->add_option("--ctx-min", pre_opts.ctx_min, "Context ratio lower bound");
    pre_cmd->add_option("--ctx-max", pre_opts.ctx_max, "Context ratio upper bound");
    pre_cmd->add_option("--seed", pre_opts.seed, "Training seed");
    pre_cmd->add_option("--encoder-seed", pre_opts.encoder_seed, "Encoder seed");
    pre_cmd->add_option("--checkpoint-every", pre_opts.checkpoint_every,
                        "Checkpoint cadence in steps (0 = per epoch)");
    pre_cmd->add_option("--val-manifest", pre_opts.val_manifest,
                        "Validation manifest for FID checkpoint selection");
    pre_cmd->add_option("--config", pre_opts.config, "Config file (JSON)");

    SynthOpts synth_opts;
    CLI::App* synth_cmd = app.add_subcommand("synth", "Generate synthetic rows");
    synth_cmd->add_option("--checkpoint", synth_opts.checkpoint, "Model checkpoint")->required();
    synth_cmd->add_option("--data", synth_opts.data, "Dataset CSV")->required();
    synth_cmd->add_option("--schema", synth_opts.schema, "Schema JSON")->required();
    synth_cmd->add_option("--out", synth_opts.out, "Output CSV")->required();
    synth_cmd->add_option("--k", synth_opts.k, "Synthetic rows to generate");
    synth_cmd->add_option("--ratio", synth_opts.ratio, "Context ratio");
    synth_cmd->add_option("--seed", synth_opts.seed, "Run seed");
    synth_cmd->add_option("--encoder-seed", synth_opts.encoder_seed, "Encoder seed");
    synth_cmd->add_option("--decoder-epochs", synth_opts.decoder_epochs, "Decoder epochs");
    synth_cmd->add_option("--decoder-hidden", synth_opts.decoder_hidden, "Decoder hidden dim");
    synth_cmd->add_option("--decoder-lr", synth_opts.decoder_lr, "Decoder learning rate");
    synth_cmd->add_option("--config", synth_opts.config, "Config file (JSON)");

    EvalOpts eval_opts;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a synthetic table");
    eval_cmd->add_option("--syn", eval_opts.syn, "Synthetic CSV")->required();
    eval_cmd->add_option("--train", eval_opts.train, "Training CSV")->required();
    eval_cmd->add_option("--val", eval_opts.val, "Validation CSV (optional)");
    eval_cmd->add_option("--test", eval_opts.test, "Test CSV")->required();
    eval_cmd->add_option("--schema", eval_opts.schema, "Schema JSON")->required();
    eval_cmd->add_option("--out", eval_opts.out, "Report JSON path")->required();
    eval_cmd->add_option("--dataset", eval_opts.dataset, "Dataset label");
    eval_cmd->add_option("--method", eval_opts.method, "Method label");
    eval_cmd->add_option("--seed-id", eval_opts.seed_id, "Seed label");
    eval_cmd->add_option("--config", eval_opts.config, "Config file (JSON)");

    FrontierOpts fr_opts;
    CLI::App* fr_cmd = app.add_subcommand("frontier", "Quality-privacy frontier series");
    fr_cmd->add_option("--data", fr_opts.data, "Dataset CSV")->required();
    fr_cmd->add_option("--schema", fr_opts.schema, "Schema JSON")->required();
    fr_cmd->add_option("--mode", fr_opts.mode, "dataset_specific or icl")->required();
    fr_cmd->add_option("--out", fr_opts.out, "Output CSV")->required();
    fr_cmd->add_option("--checkpoint", fr_opts.checkpoint, "Pretrained checkpoint (icl mode)");
    fr_cmd->add_option("--n", fr_opts.n, "Training subset size");
    fr_cmd->add_option("--k", fr_opts.k, "Synthetic rows per point");
    fr_cmd->add_option("--epochs", fr_opts.epochs, "Training epochs (dataset_specific)");
    fr_cmd->add_option("--seed", fr_opts.seed, "Run seed");
    fr_cmd->add_option("--encoder-seed", fr_opts.encoder_seed, "Encoder seed");
    fr_cmd->add_option("--config", fr_opts.config, "Config file (JSON)");

    AblateOpts ab_opts;
    CLI::App* ab_cmd = app.add_subcommand("ablate", "Single-dataset / no-permutation variants");
    ab_cmd->add_option("--data", ab_opts.data, "Dataset CSV")->required();
    ab_cmd->add_option("--schema", ab_opts.schema, "Schema JSON")->required();
    ab_cmd->add_option("--variant", ab_opts.variant, "S or N")->required();
    ab_cmd->add_option("--out", ab_opts.out, "Report JSON path")->required();
    ab_cmd->add_option("--manifest", ab_opts.manifest, "Corpus manifest (variant N)");
    ab_cmd->add_option("--n", ab_opts.n, "Training subset size");
    ab_cmd->add_option("--k", ab_opts.k, "Synthetic rows");
    ab_cmd->add_option("--epochs", ab_opts.epochs, "Training epochs");
    ab_cmd->add_option("--seed", ab_opts.seed, "Run seed");
    ab_cmd->add_option("--encoder-seed", ab_opts.encoder_seed, "Encoder seed");
    ab_cmd->add_option("--dataset", ab_opts.dataset, "Dataset label");
    ab_cmd->add_option("--config", ab_opts.config, "Config file (JSON)");

    ReportOpts rep_opts;
    CLI::App* rep_cmd = app.add_subcommand("report", "Aggregate metric reports");
    rep_cmd->add_option("--inputs", rep_opts.inputs, "Metric report JSONs")->required();
    rep_cmd->add_option("--out-dir", rep_opts.out_dir, "Output directory")->required();
    rep_cmd->add_option("--config", rep_opts.config, "Config file (JSON)");

    try {
        app.parse(argc, argv);
        if (corpus_cmd->parsed()) return cmd_corpus(corpus_cmd, corpus_opts);
        if (pre_cmd->parsed()) return cmd_pretrain(pre_cmd, pre_opts);
        if (synth_cmd->parsed()) return cmd_synth(synth_cmd, synth_opts);
        if (eval_cmd->parsed()) return cmd_eval(eval_cmd, eval_opts);
        if (fr_cmd->parsed()) return cmd_frontier(fr_cmd, fr_opts);
        if (ab_cmd->parsed()) return cmd_ablate(ab_cmd, ab_opts);
        if (rep_cmd->parsed()) return cmd_report(rep_cmd, rep_opts);
        return 2;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
