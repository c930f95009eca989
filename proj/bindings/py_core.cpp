// Python bindings for the laboratory's main operations: building encoder
// models, generating tasks, tuning under a policy, and the analysis tools
// (representation similarity, loss interpolation, learning-rate sweeps,
// parameter accounting, checkpoints). Arrays cross the boundary as numpy
// float64; token id matrices as integer arrays.
#include <pybind11/pybind11.h>
#include <pybind11/numpy.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "adapterlab/analysis.hpp"
#include "adapterlab/checkpoint.hpp"
#include "adapterlab/data.hpp"
#include "adapterlab/model.hpp"
#include "adapterlab/tensor.hpp"
#include "adapterlab/tuning.hpp"

namespace py = pybind11;
using namespace adapterlab;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;
using IdArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

core::Tensor tensor_from(const DoubleArray& arr) {
    std::vector<int> shape(static_cast<std::size_t>(arr.ndim()));
    for (py::ssize_t i = 0; i < arr.ndim(); ++i)
        shape[static_cast<std::size_t>(i)] = static_cast<int>(arr.shape(i));
    std::vector<double> data(arr.data(), arr.data() + arr.size());
    return core::Tensor(std::move(shape), std::move(data));
}

py::array_t<double> array_from(const core::Tensor& t) {
    std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
    py::array_t<double> arr(shape);
    std::memcpy(arr.mutable_data(), t.data(), static_cast<std::size_t>(t.size()) * sizeof(double));
    return arr;
}

model::TokenBatch batch_from(const IdArray& ids) {
    if (ids.ndim() != 2) throw std::invalid_argument("token ids must be a 2-D array");
    model::TokenBatch batch;
    batch.batch = static_cast<int>(ids.shape(0));
    batch.seq = static_cast<int>(ids.shape(1));
    batch.ids.reserve(static_cast<std::size_t>(ids.size()));
    const std::int64_t* p = ids.data();
    for (py::ssize_t i = 0; i < ids.size(); ++i)
        batch.ids.push_back(static_cast<int>(p[i]));
    return batch;
}

model::CountFilter filter_from(const std::string& name) {
    if (name == "all") return model::CountFilter::all;
    if (name == "trainable") return model::CountFilter::trainable;
    if (name == "adapters") return model::CountFilter::adapters;
    throw std::invalid_argument("unknown parameter filter '" + name +
                                "' (use all, trainable, or adapters)");
}

const core::Parameter& find_param(const model::EncoderModel& m, const std::string& name) {
    return m.param(name);
}

std::optional<tuning::MixoutConfig> mixout_from(std::optional<double> p, bool compensate) {
    if (!p) return std::nullopt;
    return tuning::MixoutConfig{*p, compensate};
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Desk-scale laboratory for comparing adapter-based tuning with full "
              "fine-tuning of small transformer encoders";

    // ---- configuration -----------------------------------------------------
    py::class_<model::TransformerConfig>(m, "TransformerConfig")
        .def(py::init<>())
        .def_readwrite("num_layers", &model::TransformerConfig::num_layers)
        .def_readwrite("model_dim", &model::TransformerConfig::model_dim)
        .def_readwrite("num_heads", &model::TransformerConfig::num_heads)
        .def_readwrite("ffn_dim", &model::TransformerConfig::ffn_dim)
        .def_readwrite("vocab_size", &model::TransformerConfig::vocab_size)
        .def_readwrite("max_seq_len", &model::TransformerConfig::max_seq_len)
        .def_readwrite("dropout_rate", &model::TransformerConfig::dropout_rate);

    py::class_<model::AdapterConfig>(m, "AdapterConfig")
        .def(py::init([](int hidden_size, bool after_attention, bool after_ffn) {
                 model::AdapterConfig cfg;
                 cfg.hidden_size = hidden_size;
                 cfg.insert_after_attention = after_attention;
                 cfg.insert_after_ffn = after_ffn;
                 return cfg;
             }),
             py::arg("hidden_size") = 8, py::arg("after_attention") = true,
             py::arg("after_ffn") = true)
        .def_readwrite("hidden_size", &model::AdapterConfig::hidden_size)
        .def_readwrite("after_attention", &model::AdapterConfig::insert_after_attention)
        .def_readwrite("after_ffn", &model::AdapterConfig::insert_after_ffn);

    py::class_<tuning::TuningPolicy>(m, "TuningPolicy")
        .def_static(
            "finetune",
            [](std::optional<double> mixout_p, bool compensate) {
                return tuning::TuningPolicy::full_finetune(mixout_from(mixout_p, compensate));
            },
            py::arg("mixout_p") = std::nullopt, py::arg("mixout_compensate") = true)
        .def_static(
            "adapter",
            [](const model::AdapterConfig& cfg, std::optional<double> mixout_p, bool compensate) {
                return tuning::TuningPolicy::adapter_tuning(cfg, mixout_from(mixout_p, compensate));
            },
            py::arg("adapter"), py::arg("mixout_p") = std::nullopt,
            py::arg("mixout_compensate") = true)
        .def_property_readonly("name", &tuning::TuningPolicy::name)
        .def("__repr__",
             [](const tuning::TuningPolicy& p) { return "TuningPolicy(" + p.name() + ")"; });

    py::class_<tuning::TrainConfig>(m, "TrainConfig")
        .def(py::init([](int epochs, int batch_size, double lr, double warmup_fraction,
                         std::uint64_t seed, int eval_every, std::int64_t max_steps,
                         const std::string& metric) {
                 tuning::TrainConfig cfg;
                 cfg.epochs = epochs;
                 cfg.batch_size = batch_size;
                 cfg.peak_lr = lr;
                 cfg.warmup_fraction = warmup_fraction;
                 cfg.seed = seed;
                 cfg.eval_every = eval_every;
                 cfg.max_steps = max_steps;
                 cfg.metric = tuning::metric_from_string(metric);
                 return cfg;
             }),
             py::arg("epochs") = 20, py::arg("batch_size") = 16, py::arg("lr") = 0.0,
             py::arg("warmup_fraction") = 0.1, py::arg("seed") = 0, py::arg("eval_every") = 0,
             py::arg("max_steps") = 0, py::arg("metric") = "accuracy")
        .def_readwrite("epochs", &tuning::TrainConfig::epochs)
        .def_readwrite("batch_size", &tuning::TrainConfig::batch_size)
        .def_readwrite("lr", &tuning::TrainConfig::peak_lr)
        .def_readwrite("warmup_fraction", &tuning::TrainConfig::warmup_fraction)
        .def_readwrite("seed", &tuning::TrainConfig::seed)
        .def_readwrite("eval_every", &tuning::TrainConfig::eval_every)
        .def_readwrite("max_steps", &tuning::TrainConfig::max_steps);

    // ---- data ----------------------------------------------------------------
    py::class_<data::SyntheticTaskSpec>(m, "SyntheticTaskSpec")
        .def(py::init([](int vocab_size, int num_classes, int keywords_per_class,
                         double keyword_rate, int min_len, int max_len, double label_noise,
                         std::uint64_t seed) {
                 data::SyntheticTaskSpec spec;
                 spec.vocab_size = vocab_size;
                 spec.num_classes = num_classes;
                 spec.keywords_per_class = keywords_per_class;
                 spec.keyword_rate = keyword_rate;
                 spec.min_len = min_len;
                 spec.max_len = max_len;
                 spec.label_noise = label_noise;
                 spec.seed = seed;
                 return spec;
             }),
             py::arg("vocab_size") = 256, py::arg("num_classes") = 2,
             py::arg("keywords_per_class") = 4, py::arg("keyword_rate") = 0.15,
             py::arg("min_len") = 8, py::arg("max_len") = 24, py::arg("label_noise") = 0.0,
             py::arg("seed") = 0)
        .def_readwrite("vocab_size", &data::SyntheticTaskSpec::vocab_size)
        .def_readwrite("num_classes", &data::SyntheticTaskSpec::num_classes)
        .def_readwrite("keywords_per_class", &data::SyntheticTaskSpec::keywords_per_class)
        .def_readwrite("keyword_rate", &data::SyntheticTaskSpec::keyword_rate)
        .def_readwrite("min_len", &data::SyntheticTaskSpec::min_len)
        .def_readwrite("max_len", &data::SyntheticTaskSpec::max_len)
        .def_readwrite("label_noise", &data::SyntheticTaskSpec::label_noise)
        .def_readwrite("seed", &data::SyntheticTaskSpec::seed);

    py::class_<data::TaskDataset>(m, "TaskDataset")
        .def_property_readonly("num_classes", &data::TaskDataset::num_classes)
        .def_readonly("label_names", &data::TaskDataset::label_names)
        .def_readonly("provenance", &data::TaskDataset::provenance)
        .def_property_readonly("vocab_size",
                               [](const data::TaskDataset& d) { return d.vocab.size(); })
        .def_property_readonly("sizes",
                               [](const data::TaskDataset& d) {
                                   return py::make_tuple(d.train.size(), d.dev.size(),
                                                         d.test.size());
                               })
        .def(
            "subsample",
            [](const data::TaskDataset& d, int k, std::uint64_t seed, bool stratified) {
                return data::subsample_low_resource(d, k, seed, stratified);
            },
            py::arg("k"), py::arg("seed") = 0, py::arg("stratified") = false,
            "Copy of the dataset with the train split cut to k examples.");

    py::class_<data::TokenizedCorpus>(m, "TokenizedCorpus")
        .def_property_readonly("vocab_size",
                               [](const data::TokenizedCorpus& c) { return c.vocab.size(); })
        .def_property_readonly("num_sequences",
                               [](const data::TokenizedCorpus& c) { return c.sequences.size(); });

    m.def(
        "make_synthetic_task",
        [](const data::SyntheticTaskSpec& spec, int train, int dev, int test, int max_len) {
            return data::generate_synthetic_task(spec, {train, dev, test}, {}, max_len);
        },
        py::arg("spec"), py::arg("train") = 1000, py::arg("dev") = 200, py::arg("test") = 200,
        py::arg("max_len") = 128,
        "Keyword-classification task where a keyword-lookup rule is Bayes optimal.");

    m.def(
        "load_task",
        [](const std::string& dir, int min_freq, int max_vocab, int max_len) {
            return data::load_task_tsv(dir, {min_freq, max_vocab}, max_len);
        },
        py::arg("dir"), py::arg("min_freq") = 1, py::arg("max_vocab") = 0,
        py::arg("max_len") = 128, "Load train/dev/test.tsv (text<TAB>label) from a directory.");

    m.def(
        "tokenize_lines",
        [](const std::vector<std::string>& lines, int min_freq, int max_vocab) {
            return data::tokenize_corpus(lines, {min_freq, max_vocab});
        },
        py::arg("lines"), py::arg("min_freq") = 1, py::arg("max_vocab") = 0,
        "Lowercased whitespace tokenization into a corpus for masked-token pretraining.");

    // ---- model -----------------------------------------------------------------
    py::class_<model::EncoderModel>(m, "EncoderModel")
        .def(py::init([](const model::TransformerConfig& cfg,
                         std::optional<model::AdapterConfig> adapter, int num_classes,
                         std::uint64_t seed) {
                 return model::EncoderModel(cfg, adapter, num_classes, seed);
             }),
             py::arg("config"), py::arg("adapter") = std::nullopt, py::arg("num_classes") = 2,
             py::arg("seed") = 0)
        .def_property_readonly("num_classes", &model::EncoderModel::num_classes)
        .def_property_readonly("seed", &model::EncoderModel::seed)
        .def_property_readonly("has_adapters",
                               [](const model::EncoderModel& mm) {
                                   return mm.adapter_config().has_value();
                               })
        .def("clone", &model::EncoderModel::clone)
        .def("with_adapters", &model::EncoderModel::with_adapters, py::arg("adapter"),
             "Copy with freshly initialized identity adapters grafted in.")
        .def("rebase_initials", &model::EncoderModel::rebase_initials,
             "Mark the current weights as the reference state for drift and mixout.")
        .def("parameter_names",
             [](const model::EncoderModel& mm) {
                 std::vector<std::string> names;
                 for (const core::Parameter& p : mm.parameters()) names.push_back(p.name);
                 return names;
             })
        .def(
            "parameter",
            [](const model::EncoderModel& mm, const std::string& name) {
                return array_from(find_param(mm, name).value);
            },
            py::arg("name"), "Copy of a parameter's current values.")
        .def(
            "parameter_initial",
            [](const model::EncoderModel& mm, const std::string& name) {
                return array_from(find_param(mm, name).initial);
            },
            py::arg("name"), "Copy of a parameter's reference (starting) values.")
        .def(
            "is_frozen",
            [](const model::EncoderModel& mm, const std::string& name) {
                return find_param(mm, name).frozen;
            },
            py::arg("name"))
        .def(
            "forward",
            [](model::EncoderModel& mm, const IdArray& ids) {
                model::EncoderOutputs out = mm.forward_values(batch_from(ids));
                py::list hidden;
                for (const core::Tensor& h : out.hidden) hidden.append(array_from(h));
                py::dict result;
                result["hidden"] = hidden;
                result["pooled"] = array_from(out.pooled);
                return result;
            },
            py::arg("ids"),
            "Deterministic forward pass; 'hidden' holds embeddings plus every layer output.");

    m.def(
        "count_parameters",
        [](const model::EncoderModel& mm, const std::string& filter) {
            model::ParameterCount c = model::count_parameters(mm, filter_from(filter));
            return py::make_tuple(c.count, c.fraction);
        },
        py::arg("model"), py::arg("filter") = "all",
        "(count, fraction of all parameters) for a built model.");
    m.def(
        "count_parameters_config",
        [](const model::TransformerConfig& cfg, std::optional<model::AdapterConfig> adapter,
           int num_classes, const std::string& filter) {
            model::ParameterCount c =
                model::count_parameters(cfg, adapter, num_classes, filter_from(filter));
            return py::make_tuple(c.count, c.fraction);
        },
        py::arg("config"), py::arg("adapter") = std::nullopt, py::arg("num_classes") = 2,
        py::arg("filter") = "all", "Closed-form parameter accounting for a configuration.");

    m.def(
        "adapter_forward",
        [](const DoubleArray& h, const DoubleArray& down_w, const DoubleArray& down_b,
           const DoubleArray& up_w, const DoubleArray& up_b) {
            model::AdapterLayer layer{tensor_from(down_w), tensor_from(down_b),
                                      tensor_from(up_w), tensor_from(up_b)};
            return array_from(model::adapter_forward(tensor_from(h), layer));
        },
        py::arg("h"), py::arg("down_w"), py::arg("down_b"), py::arg("up_w"), py::arg("up_b"),
        "h + up(tanh(down(h))), the bottleneck residual map.");

    // ---- tuning -----------------------------------------------------------------
    py::class_<tuning::EvalPoint>(m, "EvalPoint")
        .def_readonly("step", &tuning::EvalPoint::step)
        .def_readonly("train_loss", &tuning::EvalPoint::train_loss)
        .def_readonly("dev_metric", &tuning::EvalPoint::dev_metric)
        .def("__repr__", [](const tuning::EvalPoint& e) {
            return "EvalPoint(step=" + std::to_string(e.step) +
                   ", train_loss=" + std::to_string(e.train_loss) +
                   ", dev_metric=" + std::to_string(e.dev_metric) + ")";
        });

    py::class_<tuning::RunRecord>(m, "RunRecord")
        .def_readonly("config_digest", &tuning::RunRecord::config_digest)
        .def_readonly("seed", &tuning::RunRecord::seed)
        .def_readonly("metric", &tuning::RunRecord::metric)
        .def_readonly("evaluations", &tuning::RunRecord::evaluations)
        .def_readonly("selected_step", &tuning::RunRecord::selected_step)
        .def_readonly("selected_epoch", &tuning::RunRecord::selected_epoch)
        .def_readonly("final_metric", &tuning::RunRecord::final_metric)
        .def_readonly("warnings", &tuning::RunRecord::warnings)
        .def("same_results", &tuning::RunRecord::same_results, py::arg("other"),
             "True when two runs agree on every recorded number (wall time aside).");

    m.def("train", &tuning::train, py::arg("model"), py::arg("dataset"), py::arg("policy"),
          py::arg("config"),
          "Supervised tuning under a policy; the model is left at its best-dev weights.");
    m.def("tapt_pretrain", &tuning::tapt_pretrain, py::arg("model"), py::arg("corpus"),
          py::arg("policy"), py::arg("config"),
          "Masked-token pretraining on a corpus; the model keeps its final weights.");
    m.def(
        "evaluate",
        [](model::EncoderModel& mm, const data::TaskDataset& ds, const std::string& split,
           const std::string& metric, int batch_size) {
            tuning::MetricValue v = tuning::evaluate(mm, ds.split(split),
                                                     tuning::metric_from_string(metric),
                                                     batch_size);
            return py::make_tuple(v.value, v.degenerate);
        },
        py::arg("model"), py::arg("dataset"), py::arg("split") = "test",
        py::arg("metric") = "accuracy", py::arg("batch_size") = 32,
        "(value, degenerate) for a classification metric on one split.");
    m.def(
        "dataset_loss",
        [](model::EncoderModel& mm, const data::TaskDataset& ds, const std::string& split,
           int batch_size) { return tuning::dataset_loss(mm, ds.split(split), batch_size); },
        py::arg("model"), py::arg("dataset"), py::arg("split") = "dev", py::arg("batch_size") = 32,
        "Mean classifier cross-entropy over a split, evaluation mode.");
    m.def(
        "lr_at",
        [](std::int64_t step, std::int64_t total_steps, double peak_lr, double warmup_fraction) {
            tuning::TrainConfig cfg;
            cfg.peak_lr = peak_lr;
            cfg.warmup_fraction = warmup_fraction;
            return tuning::lr_at(step, total_steps, cfg);
        },
        py::arg("step"), py::arg("total_steps"), py::arg("peak_lr"),
        py::arg("warmup_fraction") = 0.1, "Linear warmup then linear decay schedule.");
    m.def(
        "mixout_effective_weight",
        [](const DoubleArray& w, const DoubleArray& w0, double p,
           const std::vector<bool>& replaced, bool compensate) {
            std::vector<std::uint8_t> mask(replaced.begin(), replaced.end());
            return array_from(
                tuning::mixout_effective_weight(tensor_from(w), tensor_from(w0), p, mask,
                                                compensate));
        },
        py::arg("w"), py::arg("w0"), py::arg("p"), py::arg("replaced"),
        py::arg("compensate") = true,
        "Weights after replacing the masked input columns with their starting values.");

    // ---- analysis -----------------------------------------------------------------
    m.def(
        "rsa_score",
        [](const DoubleArray& a, const DoubleArray& b) {
            return analysis::rsa_score(tensor_from(a), tensor_from(b));
        },
        py::arg("a"), py::arg("b"),
        "Pearson correlation of pairwise row cosine similarities (second-order agreement).");

    m.def(
        "layer_similarity",
        [](model::EncoderModel& a, model::EncoderModel& b, const data::TaskDataset& ds,
           const std::string& split, int samples, std::uint64_t seed, int batch_size) {
            analysis::RSAConfig cfg;
            cfg.sample_size = samples;
            cfg.seed = seed;
            const std::vector<data::LabeledExample>& examples = ds.split(split);
            std::vector<analysis::TokenRef> refs = analysis::sample_token_refs(examples, cfg);
            analysis::RepresentationSet ra =
                analysis::collect_representations(a, examples, refs, "a", batch_size);
            analysis::RepresentationSet rb =
                analysis::collect_representations(b, examples, refs, "b", batch_size);
            return analysis::rsa_layer_scores(ra, rb);
        },
        py::arg("model_a"), py::arg("model_b"), py::arg("dataset"), py::arg("split") = "dev",
        py::arg("samples") = 512, py::arg("seed") = 0, py::arg("batch_size") = 32,
        "Per-level similarity of two models' representations on shared token anchors.");

    m.def("default_alpha_grid", &analysis::default_alpha_grid,
          "21 interpolation points from -2 to 2.");
    m.def("default_sweep_lrs", &analysis::default_sweep_lrs,
          "The standard learning-rate grid, 2e-5 through 1e-4.");

    m.def(
        "loss_landscape",
        [](const model::EncoderModel& a, const model::EncoderModel& b,
           const data::TaskDataset& ds, const std::string& split,
           std::optional<std::vector<double>> alphas, int batch_size) {
            analysis::ModelSnapshot theta0 = analysis::snapshot_parameters(a);
            analysis::ModelSnapshot theta1 = analysis::snapshot_parameters(b);
            model::EncoderModel probe = b.clone();
            std::vector<analysis::LandscapePoint> pts = analysis::loss_landscape(
                probe, theta0, theta1, ds.split(split),
                alphas ? *alphas : analysis::default_alpha_grid(), batch_size);
            std::vector<std::pair<double, double>> out;
            for (const analysis::LandscapePoint& p : pts) out.emplace_back(p.alpha, p.loss);
            return out;
        },
        py::arg("model_a"), py::arg("model_b"), py::arg("dataset"), py::arg("split") = "dev",
        py::arg("alphas") = std::nullopt, py::arg("batch_size") = 32,
        "[(alpha, loss)] along the straight line from model_a's weights to model_b's. "
        "Both models must share one architecture.");

    py::class_<analysis::Quartiles>(m, "Quartiles")
        .def_readonly("min", &analysis::Quartiles::min)
        .def_readonly("q1", &analysis::Quartiles::q1)
        .def_readonly("median", &analysis::Quartiles::median)
        .def_readonly("q3", &analysis::Quartiles::q3)
        .def_readonly("max", &analysis::Quartiles::max)
        .def_property_readonly("iqr", &analysis::Quartiles::iqr);
    m.def("quartiles", &analysis::quartiles, py::arg("values"),
          "Order statistics with linear interpolation.");

    py::class_<analysis::SweepCell>(m, "SweepCell")
        .def_readonly("lr", &analysis::SweepCell::lr)
        .def_readonly("seed", &analysis::SweepCell::seed)
        .def_readonly("metric", &analysis::SweepCell::metric)
        .def_readonly("failed", &analysis::SweepCell::failed)
        .def_readonly("note", &analysis::SweepCell::note);

    m.def(
        "lr_sweep",
        [](const model::EncoderModel& base, const data::TaskDataset& ds,
           const tuning::TuningPolicy& policy, std::optional<std::vector<double>> lrs,
           std::optional<std::vector<std::uint64_t>> seeds, const tuning::TrainConfig& cfg) {
            analysis::SweepResult r = analysis::lr_sweep(
                base, ds, policy, lrs ? *lrs : analysis::default_sweep_lrs(),
                seeds ? *seeds : std::vector<std::uint64_t>{0, 1, 2, 3, 4}, cfg);
            py::dict per_lr;
            for (const analysis::LrQuartiles& q : r.per_lr) per_lr[py::float_(q.lr)] = q.stats;
            return py::make_tuple(r.cells, per_lr);
        },
        py::arg("base"), py::arg("dataset"), py::arg("policy"), py::arg("lrs") = std::nullopt,
        py::arg("seeds") = std::nullopt, py::arg("config") = tuning::TrainConfig{},
        "(cells, {lr: Quartiles}) over the learning-rate by seed grid; failures score 0.");

    // ---- checkpoints -----------------------------------------------------------------
    py::class_<checkpoint::LoadedCheckpoint>(m, "LoadedCheckpoint")
        .def_readonly("model", &checkpoint::LoadedCheckpoint::model)
        .def_readonly("label_names", &checkpoint::LoadedCheckpoint::label_names)
        .def_property_readonly("policy",
                               [](const checkpoint::LoadedCheckpoint& c) { return c.meta.policy; })
        .def_property_readonly("step",
                               [](const checkpoint::LoadedCheckpoint& c) { return c.meta.step; });

    m.def(
        "save_checkpoint",
        [](const std::string& dir, const model::EncoderModel& mm, const data::TaskDataset& ds,
           const std::string& policy, std::int64_t step) {
            checkpoint::save_checkpoint(dir, mm, ds.vocab, ds.label_names, {policy, step});
        },
        py::arg("dir"), py::arg("model"), py::arg("dataset"), py::arg("policy") = "",
        py::arg("step") = 0,
        "Write manifest.json + params.bin; the dataset supplies vocabulary and labels.");
    m.def("load_checkpoint", &checkpoint::load_checkpoint, py::arg("dir"),
          "Rebuild a model with every value, starting point, and frozen flag intact.");
}
