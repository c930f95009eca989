#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "adapterlab/analysis.hpp"
#include "adapterlab/checkpoint.hpp"
#include "adapterlab/data.hpp"
#include "adapterlab/model.hpp"
#include "adapterlab/run_io.hpp"
#include "adapterlab/tuning.hpp"

namespace {

using json = nlohmann::ordered_json;
using namespace adapterlab;

/// Problems with flags or configuration; reported on stderr with exit 1.
/// Everything else that throws is a runtime failure and exits 2.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Resolved configuration: defaults, overridden by --config JSON (flat keys),
// overridden by command-line flags. config.json in the run directory holds
// the final state and is sufficient to reproduce the run within one build.
// ---------------------------------------------------------------------------

struct Settings {
    // inputs
    std::string data;
    std::string model;   // eval
    std::string model_a; // rsa / landscape
    std::string model_b;
    std::string init_from; // start train/tapt from this checkpoint

    // tuning policy
    std::string policy = "finetune";
    int adapter_size = 8;
    bool adapter_after_attention = true;
    bool adapter_after_ffn = true;
    double mixout_p = 0.9;
    bool mixout_compensate = true;

    // architecture
    int num_layers = 2;
    int model_dim = 32;
    int num_heads = 2;
    int ffn_dim = 128;
    int max_seq_len = 128;
    double dropout_rate = 0.1;
    int vocab_size = 1000; // params command only; elsewhere the data decides
    int num_classes = 2;   // tapt/params; train/eval take it from the data

    // optimization
    int epochs = 20;
    int batch_size = 16;
    double lr = 0.0; // 0 = policy default (2e-5 full, 1e-4 adapter)
    double warmup_fraction = 0.1;
    std::uint64_t seed = 0;
    std::int64_t eval_every = 0; // 0 = once per epoch
    std::int64_t max_steps = 0;  // >0 = run exactly this many steps
    std::string metric = "accuracy";

    // data preparation
    std::int64_t train_subset = 0; // >0 = subsample the train split
    bool train_subset_stratified = false;
    int min_freq = 1;
    int max_vocab = 0;

    // representation similarity
    int rsa_samples = 512;
    std::uint64_t rsa_seed = 0;
    std::string rsa_split = "dev";

    // loss landscape
    double alpha_lo = -2.0;
    double alpha_hi = 2.0;
    int alpha_points = 21;
    std::string landscape_split = "dev";

    // learning-rate sweep
    std::vector<double> sweep_lrs = analysis::default_sweep_lrs();
    std::vector<std::uint64_t> sweep_seeds = {0, 1, 2, 3, 4};

    // synthetic task generation
    int synth_vocab = 256;
    int synth_classes = 2;
    int synth_keywords_per_class = 4;
    double synth_keyword_rate = 0.15;
    int synth_min_len = 8;
    int synth_max_len = 24;
    double synth_label_noise = 0.0;
    int synth_train = 1000;
    int synth_dev = 200;
    int synth_test = 200;
};

template <typename T> T get_as(const json& v, const std::string& key) {
    try {
        return v.get<T>();
    } catch (const json::exception&) {
        throw UsageError("config key '" + key + "' has the wrong type");
    }
}

void apply_config_key(Settings& s, const std::string& key, const json& v) {
    if (key == "command") return; // emitted into config.json for the record
    if (key == "data") s.data = get_as<std::string>(v, key);
    else if (key == "model") s.model = get_as<std::string>(v, key);
    else if (key == "model_a") s.model_a = get_as<std::string>(v, key);
    else if (key == "model_b") s.model_b = get_as<std::string>(v, key);
    else if (key == "init_from") s.init_from = get_as<std::string>(v, key);
    else if (key == "policy") s.policy = get_as<std::string>(v, key);
    else if (key == "adapter_size") s.adapter_size = get_as<int>(v, key);
    else if (key == "adapter_after_attention") s.adapter_after_attention = get_as<bool>(v, key);
    else if (key == "adapter_after_ffn") s.adapter_after_ffn = get_as<bool>(v, key);
    else if (key == "mixout_p") s.mixout_p = get_as<double>(v, key);
    else if (key == "mixout_compensate") s.mixout_compensate = get_as<bool>(v, key);
    else if (key == "num_layers") s.num_layers = get_as<int>(v, key);
    else if (key == "model_dim") s.model_dim = get_as<int>(v, key);
    else if (key == "num_heads") s.num_heads = get_as<int>(v, key);
    else if (key == "ffn_dim") s.ffn_dim = get_as<int>(v, key);
    else if (key == "max_seq_len") s.max_seq_len = get_as<int>(v, key);
    else if (key == "dropout_rate") s.dropout_rate = get_as<double>(v, key);
    else if (key == "vocab_size") s.vocab_size = get_as<int>(v, key);
    else if (key == "num_classes") s.num_classes = get_as<int>(v, key);
    else if (key == "epochs") s.epochs = get_as<int>(v, key);
    else if (key == "batch_size") s.batch_size = get_as<int>(v, key);
    else if (key == "lr") s.lr = get_as<double>(v, key);
    else if (key == "warmup_fraction") s.warmup_fraction = get_as<double>(v, key);
    else if (key == "seed") s.seed = get_as<std::uint64_t>(v, key);
    else if (key == "eval_every") s.eval_every = get_as<std::int64_t>(v, key);
    else if (key == "max_steps") s.max_steps = get_as<std::int64_t>(v, key);
    else if (key == "metric") s.metric = get_as<std::string>(v, key);
    else if (key == "train_subset") s.train_subset = get_as<std::int64_t>(v, key);
    else if (key == "train_subset_stratified") s.train_subset_stratified = get_as<bool>(v, key);
    else if (key == "min_freq") s.min_freq = get_as<int>(v, key);
    else if (key == "max_vocab") s.max_vocab = get_as<int>(v, key);
    else if (key == "rsa_samples") s.rsa_samples = get_as<int>(v, key);
    else if (key == "rsa_seed") s.rsa_seed = get_as<std::uint64_t>(v, key);
    else if (key == "rsa_split") s.rsa_split = get_as<std::string>(v, key);
    else if (key == "alpha_lo") s.alpha_lo = get_as<double>(v, key);
    else if (key == "alpha_hi") s.alpha_hi = get_as<double>(v, key);
    else if (key == "alpha_points") s.alpha_points = get_as<int>(v, key);
    else if (key == "landscape_split") s.landscape_split = get_as<std::string>(v, key);
    else if (key == "sweep_lrs") s.sweep_lrs = get_as<std::vector<double>>(v, key);
    else if (key == "sweep_seeds") s.sweep_seeds = get_as<std::vector<std::uint64_t>>(v, key);
    else if (key == "synth_vocab") s.synth_vocab = get_as<int>(v, key);
    else if (key == "synth_classes") s.synth_classes = get_as<int>(v, key);
    else if (key == "synth_keywords_per_class") s.synth_keywords_per_class = get_as<int>(v, key);
    else if (key == "synth_keyword_rate") s.synth_keyword_rate = get_as<double>(v, key);
    else if (key == "synth_min_len") s.synth_min_len = get_as<int>(v, key);
    else if (key == "synth_max_len") s.synth_max_len = get_as<int>(v, key);
    else if (key == "synth_label_noise") s.synth_label_noise = get_as<double>(v, key);
    else if (key == "synth_train") s.synth_train = get_as<int>(v, key);
    else if (key == "synth_dev") s.synth_dev = get_as<int>(v, key);
    else if (key == "synth_test") s.synth_test = get_as<int>(v, key);
    else throw UsageError("unknown config key '" + key + "'");
}

void load_config_file(Settings& s, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw UsageError("cannot open config file " + path);
    json cfg;
    try {
        cfg = json::parse(in);
    } catch (const json::exception& e) {
        throw UsageError(path + ": " + e.what());
    }
    if (!cfg.is_object()) throw UsageError(path + ": config must be a JSON object");
    for (const auto& [key, value] : cfg.items()) apply_config_key(s, key, value);
}

json settings_json(const Settings& s, const std::string& command) {
    json j;
    j["command"] = command;
    j["data"] = s.data;
    j["model"] = s.model;
    j["model_a"] = s.model_a;
    j["model_b"] = s.model_b;
    j["init_from"] = s.init_from;
    j["policy"] = s.policy;
    j["adapter_size"] = s.adapter_size;
    j["adapter_after_attention"] = s.adapter_after_attention;
    j["adapter_after_ffn"] = s.adapter_after_ffn;
    j["mixout_p"] = s.mixout_p;
    j["mixout_compensate"] = s.mixout_compensate;
    j["num_layers"] = s.num_layers;
    j["model_dim"] = s.model_dim;
    j["num_heads"] = s.num_heads;
    j["ffn_dim"] = s.ffn_dim;
    j["max_seq_len"] = s.max_seq_len;
    j["dropout_rate"] = s.dropout_rate;
    j["vocab_size"] = s.vocab_size;
    j["num_classes"] = s.num_classes;
    j["epochs"] = s.epochs;
    j["batch_size"] = s.batch_size;
    j["lr"] = s.lr;
    j["warmup_fraction"] = s.warmup_fraction;
    j["seed"] = s.seed;
    j["eval_every"] = s.eval_every;
    j["max_steps"] = s.max_steps;
    j["metric"] = s.metric;
    j["train_subset"] = s.train_subset;
    j["train_subset_stratified"] = s.train_subset_stratified;
    j["min_freq"] = s.min_freq;
    j["max_vocab"] = s.max_vocab;
    j["rsa_samples"] = s.rsa_samples;
    j["rsa_seed"] = s.rsa_seed;
    j["rsa_split"] = s.rsa_split;
    j["alpha_lo"] = s.alpha_lo;
    j["alpha_hi"] = s.alpha_hi;
    j["alpha_points"] = s.alpha_points;
    j["landscape_split"] = s.landscape_split;
    j["sweep_lrs"] = s.sweep_lrs;
    j["sweep_seeds"] = s.sweep_seeds;
    j["synth_vocab"] = s.synth_vocab;
    j["synth_classes"] = s.synth_classes;
    j["synth_keywords_per_class"] = s.synth_keywords_per_class;
    j["synth_keyword_rate"] = s.synth_keyword_rate;
    j["synth_min_len"] = s.synth_min_len;
    j["synth_max_len"] = s.synth_max_len;
    j["synth_label_noise"] = s.synth_label_noise;
    j["synth_train"] = s.synth_train;
    j["synth_dev"] = s.synth_dev;
    j["synth_test"] = s.synth_test;
    return j;
}

// ---------------------------------------------------------------------------
// Shared assembly
// ---------------------------------------------------------------------------

tuning::TuningPolicy make_policy(const Settings& s) {
    std::optional<tuning::MixoutConfig> mix;
    bool has_mixout = s.policy == "finetune-mixout" || s.policy == "adapter-mixout";
    if (has_mixout) mix = tuning::MixoutConfig{s.mixout_p, s.mixout_compensate};
    if (s.policy == "finetune" || s.policy == "finetune-mixout")
        return tuning::TuningPolicy::full_finetune(mix);
    if (s.policy == "adapter" || s.policy == "adapter-mixout")
        return tuning::TuningPolicy::adapter_tuning(
            {s.adapter_size, s.adapter_after_attention, s.adapter_after_ffn}, mix);
    throw UsageError("unknown policy '" + s.policy +
                     "' (expected finetune, adapter, finetune-mixout, or adapter-mixout)");
}

model::TransformerConfig transformer_config(const Settings& s, int vocab_size) {
    model::TransformerConfig cfg;
    cfg.num_layers = s.num_layers;
    cfg.model_dim = s.model_dim;
    cfg.num_heads = s.num_heads;
    cfg.ffn_dim = s.ffn_dim;
    cfg.vocab_size = vocab_size;
    cfg.max_seq_len = s.max_seq_len;
    cfg.dropout_rate = s.dropout_rate;
    return cfg;
}

tuning::TrainConfig train_config(const Settings& s) {
    tuning::TrainConfig cfg;
    cfg.epochs = s.epochs;
    cfg.batch_size = s.batch_size;
    cfg.peak_lr = s.lr;
    cfg.warmup_fraction = s.warmup_fraction;
    cfg.seed = s.seed;
    cfg.eval_every = s.eval_every;
    cfg.max_steps = s.max_steps;
    cfg.metric = tuning::metric_from_string(s.metric);
    return cfg;
}

data::TaskDataset load_dataset(const Settings& s) {
    if (s.data.empty()) throw UsageError("missing --data (flag or config key)");
    data::TaskDataset ds =
        data::load_task_tsv(s.data, {s.min_freq, s.max_vocab}, s.max_seq_len);
    if (s.train_subset > 0)
        ds = data::subsample_low_resource(ds, static_cast<int>(s.train_subset), s.seed,
                                          s.train_subset_stratified);
    return ds;
}

void require_vocab_match(const data::Vocabulary& a, const data::Vocabulary& b,
                         const std::string& what) {
    if (a.tokens != b.tokens)
        throw std::runtime_error(what + ": vocabularies do not match (" +
                                 std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                                 " tokens or different contents)");
}

std::vector<double> alpha_grid(const Settings& s) {
    if (s.alpha_points < 2) throw UsageError("alpha_points must be at least 2");
    if (s.alpha_lo == -2.0 && s.alpha_hi == 2.0 && s.alpha_points == 21)
        return analysis::default_alpha_grid();
    std::vector<double> alphas;
    alphas.reserve(static_cast<std::size_t>(s.alpha_points));
    for (int i = 0; i < s.alpha_points; ++i)
        alphas.push_back(s.alpha_lo + (s.alpha_hi - s.alpha_lo) * i /
                                          static_cast<double>(s.alpha_points - 1));
    return alphas;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

model::EncoderModel starting_model(const Settings& s, const data::TaskDataset& ds,
                                   const tuning::TuningPolicy& policy) {
    if (s.init_from.empty())
        return model::EncoderModel(transformer_config(s, ds.vocab.size()), policy.adapter,
                                   ds.num_classes(), s.seed);
    checkpoint::LoadedCheckpoint ck = checkpoint::load_checkpoint(s.init_from);
    require_vocab_match(ck.vocab, ds.vocab, "init checkpoint vs dataset");
    if (ck.model.num_classes() != ds.num_classes())
        throw std::runtime_error("init checkpoint has " + std::to_string(ck.model.num_classes()) +
                                 " classes but the dataset has " +
                                 std::to_string(ds.num_classes()));
    // An adapter policy grafts fresh adapters onto an adapter-free
    // pretrained checkpoint, mirroring how adapters join a PrLM.
    std::optional<model::EncoderModel> m;
    if (policy.base == tuning::TuningBase::adapter_tuning && !ck.model.adapter_config())
        m.emplace(ck.model.with_adapters(*policy.adapter));
    else
        m.emplace(std::move(ck.model));
    // Tuning starts here: drift and mixout compare against this state.
    m->rebase_initials();
    return std::move(*m);
}

int cmd_train(const Settings& s, const std::string& out) {
    data::TaskDataset ds = load_dataset(s);
    tuning::TuningPolicy policy = make_policy(s);
    std::optional<model::EncoderModel> m(starting_model(s, ds, policy));

    cli::RunDirectory rd(out);
    checkpoint::save_checkpoint(rd.file("checkpoints/init"), *m, ds.vocab, ds.label_names,
                                {policy.name(), 0});
    tuning::RunRecord rec = tuning::train(*m, ds, policy, train_config(s));
    checkpoint::save_checkpoint(rd.file("checkpoints/best"), *m, ds.vocab, ds.label_names,
                                {policy.name(), rec.selected_step});

    rd.write_json("config.json", settings_json(s, "train"));
    rd.write_json("record.json", cli::record_to_json(rec));
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : rec.evaluations)
        rows.push_back({std::to_string(e.step), cli::fmt9(e.train_loss), cli::fmt9(e.dev_metric)});
    rd.write_metrics({"step", "train_loss", "dev_metric"}, rows);

    std::cout << "train: " << policy.name() << " test " << rec.metric << " "
              << cli::fmt9(rec.final_metric) << " (selected step " << rec.selected_step << ") -> "
              << out << "\n";
    return 0;
}

int cmd_tapt(const Settings& s, const std::string& out) {
    if (s.data.empty()) throw UsageError("missing --data (flag or config key)");
    std::vector<std::string> lines;
    std::filesystem::path dp(s.data);
    if (std::filesystem::is_regular_file(dp)) {
        lines = data::read_lines(dp.string());
    } else if (std::filesystem::exists(dp / "corpus.txt")) {
        lines = data::read_lines((dp / "corpus.txt").string());
    } else {
        throw std::runtime_error("no corpus.txt under " + s.data +
                                 " (pass a text file or a directory holding one)");
    }
    data::TokenizedCorpus corpus = data::tokenize_corpus(lines, {s.min_freq, s.max_vocab});
    tuning::TuningPolicy policy = make_policy(s);
    model::EncoderModel m(transformer_config(s, corpus.vocab.size()), policy.adapter,
                          s.num_classes, s.seed);

    cli::RunDirectory rd(out);
    checkpoint::save_checkpoint(rd.file("checkpoints/init"), m, corpus.vocab, {},
                                {policy.name(), 0});
    tuning::RunRecord rec = tuning::tapt_pretrain(m, corpus, policy, train_config(s));
    checkpoint::save_checkpoint(rd.file("checkpoints/final"), m, corpus.vocab, {},
                                {policy.name(), rec.evaluations.back().step});

    rd.write_json("config.json", settings_json(s, "tapt"));
    rd.write_json("record.json", cli::record_to_json(rec));
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : rec.evaluations)
        rows.push_back({std::to_string(e.step), cli::fmt9(e.train_loss), cli::fmt9(e.dev_metric)});
    rd.write_metrics({"step", "train_loss", "dev_metric"}, rows);

    std::cout << "tapt: " << policy.name() << " " << rec.metric << " "
              << cli::fmt9(rec.final_metric) << " after " << rec.evaluations.back().step
              << " steps -> " << out << "\n";
    return 0;
}

int cmd_eval(const Settings& s, const std::string& out) {
    if (s.model.empty()) throw UsageError("missing --model (flag or config key)");
    checkpoint::LoadedCheckpoint ck = checkpoint::load_checkpoint(s.model);
    data::TaskDataset ds = load_dataset(s);
    require_vocab_match(ck.vocab, ds.vocab, "checkpoint vs dataset");
    if (ck.label_names != ds.label_names)
        throw std::runtime_error("checkpoint label names do not match the dataset's");
    tuning::MetricKind metric = tuning::metric_from_string(s.metric);

    cli::RunDirectory rd(out);
    json record;
    record["command"] = "eval";
    record["model"] = s.model;
    record["metric"] = s.metric;
    std::vector<std::vector<std::string>> rows;
    json values;
    std::vector<std::string> warnings;
    for (const char* split : {"train", "dev", "test"}) {
        tuning::MetricValue v = tuning::evaluate(ck.model, ds.split(split), metric, s.batch_size);
        rows.push_back({split, s.metric, cli::fmt9(v.value)});
        values[split] = v.value;
        if (v.degenerate) warnings.push_back(std::string(split) + " metric degenerate (pinned to 0)");
    }
    record["values"] = std::move(values);
    record["warnings"] = warnings;
    rd.write_json("config.json", settings_json(s, "eval"));
    rd.write_json("record.json", record);
    rd.write_metrics({"split", "metric", "value"}, rows);

    std::cout << "eval: " << s.metric << " train " << rows[0][2] << " dev " << rows[1][2]
              << " test " << rows[2][2] << " -> " << out << "\n";
    return 0;
}

int cmd_rsa(const Settings& s, const std::string& out) {
    if (s.model_a.empty() || s.model_b.empty())
        throw UsageError("rsa needs --model-a and --model-b (flags or config keys)");
    checkpoint::LoadedCheckpoint a = checkpoint::load_checkpoint(s.model_a);
    checkpoint::LoadedCheckpoint b = checkpoint::load_checkpoint(s.model_b);
    require_vocab_match(a.vocab, b.vocab, "model-a vs model-b");
    data::TaskDataset ds = load_dataset(s);
    require_vocab_match(a.vocab, ds.vocab, "checkpoints vs dataset");

    analysis::RSAConfig cfg;
    cfg.sample_size = s.rsa_samples;
    cfg.seed = s.rsa_seed;
    const auto& split = ds.split(s.rsa_split);
    bool exhausted = false;
    std::vector<analysis::TokenRef> refs = analysis::sample_token_refs(split, cfg, &exhausted);
    analysis::RepresentationSet ra =
        analysis::collect_representations(a.model, split, refs, "model-a", s.batch_size);
    analysis::RepresentationSet rb =
        analysis::collect_representations(b.model, split, refs, "model-b", s.batch_size);
    std::vector<double> scores = analysis::rsa_layer_scores(ra, rb);

    cli::RunDirectory rd(out);
    json record;
    record["command"] = "rsa";
    record["model_a"] = s.model_a;
    record["model_b"] = s.model_b;
    record["split"] = s.rsa_split;
    record["samples"] = static_cast<std::int64_t>(refs.size());
    record["sample_exhausted"] = exhausted;
    record["scores"] = scores;
    std::vector<std::string> warnings;
    if (exhausted)
        warnings.push_back("fewer eligible token occurrences than requested; used all " +
                           std::to_string(refs.size()));
    record["warnings"] = warnings;
    rd.write_json("config.json", settings_json(s, "rsa"));
    rd.write_json("record.json", record);
    std::vector<std::vector<std::string>> rows;
    for (std::size_t l = 0; l < scores.size(); ++l)
        rows.push_back({std::to_string(l), cli::fmt9(scores[l])});
    rd.write_metrics({"layer", "score"}, rows);

    std::cout << "rsa: " << scores.size() << " layers over " << refs.size() << " occurrences -> "
              << out << "\n";
    return 0;
}

int cmd_landscape(const Settings& s, const std::string& out) {
    if (s.model_a.empty() || s.model_b.empty())
        throw UsageError("landscape needs --model-a (start) and --model-b (end)");
    checkpoint::LoadedCheckpoint a = checkpoint::load_checkpoint(s.model_a);
    checkpoint::LoadedCheckpoint b = checkpoint::load_checkpoint(s.model_b);
    require_vocab_match(a.vocab, b.vocab, "model-a vs model-b");
    data::TaskDataset ds = load_dataset(s);
    require_vocab_match(b.vocab, ds.vocab, "checkpoints vs dataset");
    if (b.label_names != ds.label_names)
        throw std::runtime_error("checkpoint label names do not match the dataset's");

    analysis::ModelSnapshot theta0 = analysis::snapshot_parameters(a.model);
    analysis::ModelSnapshot theta1 = analysis::snapshot_parameters(b.model);
    std::vector<analysis::LandscapePoint> points = analysis::loss_landscape(
        b.model, theta0, theta1, ds.split(s.landscape_split), alpha_grid(s), s.batch_size);

    cli::RunDirectory rd(out);
    json record;
    record["command"] = "landscape";
    record["model_a"] = s.model_a;
    record["model_b"] = s.model_b;
    record["split"] = s.landscape_split;
    json curve = json::array();
    std::vector<std::vector<std::string>> rows;
    for (const auto& p : points) {
        curve.push_back({{"alpha", p.alpha}, {"loss", p.loss}});
        rows.push_back({cli::fmt9(p.alpha), cli::fmt9(p.loss)});
    }
    record["curve"] = std::move(curve);
    rd.write_json("config.json", settings_json(s, "landscape"));
    rd.write_json("record.json", record);
    rd.write_metrics({"alpha", "loss"}, rows);

    std::cout << "landscape: " << points.size() << " points on " << s.landscape_split << " -> "
              << out << "\n";
    return 0;
}

int cmd_sweep(const Settings& s, const std::string& out) {
    data::TaskDataset ds = load_dataset(s);
    tuning::TuningPolicy policy = make_policy(s);
    model::EncoderModel base = starting_model(s, ds, policy);
    analysis::SweepResult result =
        analysis::lr_sweep(base, ds, policy, s.sweep_lrs, s.sweep_seeds, train_config(s));

    cli::RunDirectory rd(out);
    json record;
    record["command"] = "sweep";
    record["policy"] = s.policy;
    record["metric"] = s.metric;
    json cells = json::array();
    std::vector<std::vector<std::string>> rows;
    for (const auto& c : result.cells) {
        cells.push_back({{"lr", c.lr},
                         {"seed", c.seed},
                         {"metric", c.metric},
                         {"failed", c.failed},
                         {"note", c.note}});
        rows.push_back({cli::fmt9(c.lr), std::to_string(c.seed), cli::fmt9(c.metric),
                        c.failed ? "1" : "0"});
    }
    record["cells"] = std::move(cells);
    json per_lr = json::array();
    for (const auto& q : result.per_lr)
        per_lr.push_back({{"lr", q.lr},
                          {"min", q.stats.min},
                          {"q1", q.stats.q1},
                          {"median", q.stats.median},
                          {"q3", q.stats.q3},
                          {"max", q.stats.max},
                          {"iqr", q.stats.iqr()}});
    record["per_lr"] = std::move(per_lr);
    rd.write_json("config.json", settings_json(s, "sweep"));
    rd.write_json("record.json", record);
    rd.write_metrics({"lr", "seed", "metric", "failed"}, rows);

    std::cout << "sweep: " << result.cells.size() << " cells (" << s.sweep_lrs.size() << " lrs x "
              << s.sweep_seeds.size() << " seeds) -> " << out << "\n";
    return 0;
}

int cmd_params(const Settings& s, const std::string& out) {
    tuning::TuningPolicy policy = make_policy(s);
    model::TransformerConfig cfg = transformer_config(s, s.vocab_size);
    model::ParameterCount all =
        model::count_parameters(cfg, policy.adapter, s.num_classes, model::CountFilter::all);
    model::ParameterCount adapters =
        model::count_parameters(cfg, policy.adapter, s.num_classes, model::CountFilter::adapters);
    model::ParameterCount trainable =
        policy.base == tuning::TuningBase::full_finetune
            ? all
            : model::count_parameters(cfg, policy.adapter, s.num_classes,
                                      model::CountFilter::trainable);

    cli::RunDirectory rd(out);
    json record;
    record["command"] = "params";
    record["policy"] = s.policy;
    record["all"] = all.count;
    record["trainable"] = trainable.count;
    record["trainable_fraction"] = trainable.fraction;
    record["adapters"] = adapters.count;
    record["adapter_fraction"] = adapters.fraction;
    rd.write_json("config.json", settings_json(s, "params"));
    rd.write_json("record.json", record);
    rd.write_metrics({"filter", "count", "fraction"},
                     {{"all", std::to_string(all.count), cli::fmt9(all.fraction)},
                      {"trainable", std::to_string(trainable.count), cli::fmt9(trainable.fraction)},
                      {"adapters", std::to_string(adapters.count), cli::fmt9(adapters.fraction)}});

    std::cout << "params: all " << all.count << ", trainable " << trainable.count << " ("
              << cli::fmt9(100.0 * trainable.fraction) << "%), adapters " << adapters.count << " ("
              << cli::fmt9(100.0 * adapters.fraction) << "%) -> " << out << "\n";
    return 0;
}

int cmd_synth(const Settings& s, const std::string& out) {
    data::SyntheticTaskSpec spec;
    spec.vocab_size = s.synth_vocab;
    spec.num_classes = s.synth_classes;
    spec.keywords_per_class = s.synth_keywords_per_class;
    spec.keyword_rate = s.synth_keyword_rate;
    spec.min_len = s.synth_min_len;
    spec.max_len = s.synth_max_len;
    spec.label_noise = s.synth_label_noise;
    spec.seed = s.seed;
    data::SplitSizes sizes{s.synth_train, s.synth_dev, s.synth_test};
    data::RawSplits raw = data::generate_synthetic_raw(spec, sizes);

    cli::RunDirectory rd(out);
    data::save_task_tsv(rd.path, raw);
    std::string corpus;
    for (const auto& ex : raw.train) {
        corpus += ex.text;
        corpus += '\n';
    }
    rd.write_text("corpus.txt", corpus);

    json record;
    record["command"] = "synth";
    record["train"] = static_cast<int>(raw.train.size());
    record["dev"] = static_cast<int>(raw.dev.size());
    record["test"] = static_cast<int>(raw.test.size());
    rd.write_json("config.json", settings_json(s, "synth"));
    rd.write_json("record.json", record);
    rd.write_metrics({"split", "examples"},
                     {{"train", std::to_string(raw.train.size())},
                      {"dev", std::to_string(raw.dev.size())},
                      {"test", std::to_string(raw.test.size())}});

    std::cout << "synth: " << raw.train.size() << "/" << raw.dev.size() << "/" << raw.test.size()
              << " examples -> " << out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"adapterlab: compare adapter-based tuning against full fine-tuning of small "
                 "transformer encoders"};
    app.require_subcommand(1);

    Settings s;
    std::string config_path;
    std::string out_path;

    // Flag values land here first; only flags the user actually passed
    // override the config file.
    std::string f_data, f_policy, f_model, f_model_a, f_model_b, f_init_from, f_metric;
    std::uint64_t f_seed = 0;
    int f_adapter_size = 0, f_epochs = 0, f_batch_size = 0;
    double f_lr = 0.0;
    std::int64_t f_steps = 0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON config file with flat keys");
        sub->add_option("--out", out_path, "run directory (default ./runs/<command>)");
        sub->add_option("--seed", f_seed, "root seed for every random stream");
        sub->add_option("--data", f_data, "task directory (train/dev/test.tsv)");
    };
    auto add_tuning_flags = [&](CLI::App* sub) {
        sub->add_option("--policy", f_policy,
                        "finetune | adapter | finetune-mixout | adapter-mixout");
        sub->add_option("--adapter-size", f_adapter_size, "adapter bottleneck width m");
        sub->add_option("--lr", f_lr, "peak learning rate (0 = policy default)");
        sub->add_option("--epochs", f_epochs, "training epochs");
        sub->add_option("--batch-size", f_batch_size, "examples per optimizer step");
        sub->add_option("--steps", f_steps, "run exactly this many steps (overrides epochs)");
    };

    CLI::App* c_train = app.add_subcommand("train", "supervised tuning under a policy");
    add_common(c_train);
    add_tuning_flags(c_train);
    c_train->add_option("--init-from", f_init_from, "checkpoint to start from");
    c_train->add_option("--metric", f_metric, "accuracy | macro_f1 | micro_f1 | mcc");

    CLI::App* c_tapt = app.add_subcommand("tapt", "masked-LM pretraining on task text");
    add_common(c_tapt);
    add_tuning_flags(c_tapt);

    CLI::App* c_eval = app.add_subcommand("eval", "score a checkpoint on every split");
    add_common(c_eval);
    c_eval->add_option("--model", f_model, "checkpoint directory");
    c_eval->add_option("--metric", f_metric, "accuracy | macro_f1 | micro_f1 | mcc");

    CLI::App* c_rsa = app.add_subcommand("rsa", "per-layer representational similarity");
    add_common(c_rsa);
    c_rsa->add_option("--model-a", f_model_a, "first checkpoint directory");
    c_rsa->add_option("--model-b", f_model_b, "second checkpoint directory");

    CLI::App* c_landscape =
        app.add_subcommand("landscape", "loss along the line between two checkpoints");
    add_common(c_landscape);
    c_landscape->add_option("--model-a", f_model_a, "alpha=0 checkpoint");
    c_landscape->add_option("--model-b", f_model_b, "alpha=1 checkpoint");

    CLI::App* c_sweep = app.add_subcommand("sweep", "learning-rate x seed stability grid");
    add_common(c_sweep);
    add_tuning_flags(c_sweep);
    c_sweep->add_option("--init-from", f_init_from, "checkpoint to start from");

    CLI::App* c_params = app.add_subcommand("params", "parameter accounting for a config");
    add_common(c_params);
    c_params->add_option("--policy", f_policy,
                         "finetune | adapter | finetune-mixout | adapter-mixout");
    c_params->add_option("--adapter-size", f_adapter_size, "adapter bottleneck width m");

    CLI::App* c_synth = app.add_subcommand("synth", "generate a synthetic keyword task");
    add_common(c_synth);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    CLI::App* sub = app.get_subcommands().front();
    const std::string command = sub->get_name();

    try {
        if (!config_path.empty()) load_config_file(s, config_path);
        if (sub->count("--data")) s.data = f_data;
        if (sub->count("--seed")) s.seed = f_seed;
        if (sub->get_option_no_throw("--policy") && sub->count("--policy")) s.policy = f_policy;
        if (sub->get_option_no_throw("--adapter-size") && sub->count("--adapter-size"))
            s.adapter_size = f_adapter_size;
        if (sub->get_option_no_throw("--lr") && sub->count("--lr")) s.lr = f_lr;
        if (sub->get_option_no_throw("--epochs") && sub->count("--epochs")) s.epochs = f_epochs;
        if (sub->get_option_no_throw("--batch-size") && sub->count("--batch-size"))
            s.batch_size = f_batch_size;
        if (sub->get_option_no_throw("--steps") && sub->count("--steps")) s.max_steps = f_steps;
        if (sub->get_option_no_throw("--init-from") && sub->count("--init-from"))
            s.init_from = f_init_from;
        if (sub->get_option_no_throw("--metric") && sub->count("--metric")) s.metric = f_metric;
        if (sub->get_option_no_throw("--model") && sub->count("--model")) s.model = f_model;
        if (sub->get_option_no_throw("--model-a") && sub->count("--model-a")) s.model_a = f_model_a;
        if (sub->get_option_no_throw("--model-b") && sub->count("--model-b")) s.model_b = f_model_b;

        std::string out = out_path.empty() ? "./runs/" + command : out_path;
        if (command == "train") return cmd_train(s, out);
        if (command == "tapt") return cmd_tapt(s, out);
        if (command == "eval") return cmd_eval(s, out);
        if (command == "rsa") return cmd_rsa(s, out);
        if (command == "landscape") return cmd_landscape(s, out);
        if (command == "sweep") return cmd_sweep(s, out);
        if (command == "params") return cmd_params(s, out);
        if (command == "synth") return cmd_synth(s, out);
        std::cerr << "error: unknown command " << command << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        std::cerr << "run '" << (argc > 0 ? argv[0] : "adapterlab") << " " << command
                  << " --help' for usage\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
