#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adapterlab/data.hpp"
#include "adapterlab/model.hpp"

namespace adapterlab::tuning {

using core::Parameter;
using core::Rng;
using core::Tensor;

enum class TuningBase : std::uint8_t { full_finetune, adapter_tuning };

/// Stochastic replacement of trainable linear weights toward their initial
/// values, with expectation compensation by default. Active mixout disables
/// dropout for the run, mirroring the swap of regularizers.
struct MixoutConfig {
    double probability = 0.9;
    bool compensate = true;

    bool operator==(const MixoutConfig&) const = default;
};

struct TuningPolicy {
    TuningBase base = TuningBase::full_finetune;
    std::optional<model::AdapterConfig> adapter; // present iff adapter_tuning
    std::optional<MixoutConfig> mixout;

    static TuningPolicy full_finetune(std::optional<MixoutConfig> mix = {});
    static TuningPolicy adapter_tuning(model::AdapterConfig cfg,
                                       std::optional<MixoutConfig> mix = {});
    /// finetune | adapter | finetune-mixout | adapter-mixout
    std::string name() const;
};

struct PartitionReport {
    std::vector<std::string> trainable;
    std::vector<std::string> frozen;
};

/// Sets the frozen flag on every model parameter. Full fine-tuning trains
/// everything; adapter tuning trains adapters, layer norms, and the active
/// head only. The model must have adapters exactly when the policy does.
PartitionReport apply_tuning_policy(model::EncoderModel& m, const TuningPolicy& policy,
                                    model::HeadKind active_head = model::HeadKind::classifier);

enum class MetricKind : std::uint8_t { accuracy, macro_f1, micro_f1, mcc };

MetricKind metric_from_string(std::string_view s);
std::string metric_name(MetricKind m);

struct TrainConfig {
    int epochs = 20;
    int batch_size = 16;
    double peak_lr = 0.0; // 0 -> policy default: 2e-5 full fine-tune, 1e-4 adapter
    double warmup_fraction = 0.1;
    std::uint64_t seed = 0;
    int eval_every = 0;          // steps between dev evaluations; 0 -> epoch end
    std::int64_t max_steps = 0;  // 0 -> no cap
    MetricKind metric = MetricKind::accuracy;
};

double resolve_peak_lr(const TrainConfig& cfg, const TuningPolicy& policy);

/// Linear warmup from 0 to peak over warmup_fraction * total_steps, then
/// linear decay to 0 at total_steps. Requires a resolved (positive) peak_lr.
double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg);

struct OptimizerState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    explicit OptimizerState(const std::vector<Parameter>& params);
};

/// Bias-corrected Adam over non-frozen parameters; frozen parameters and
/// their moments are untouched bit-exactly.
void adam_step(std::vector<Parameter>& params, OptimizerState& state, double lr);

/// w and w0 are out x in; the mask marks replaced input neurons (columns).
/// p = 0 returns w unchanged; w == w0 is a bit-exact fixed point.
Tensor mixout_effective_weight(const Tensor& w, const Tensor& w0, double p,
                               const std::vector<std::uint8_t>& replaced,
                               bool compensate = true);

struct EvalPoint {
    std::int64_t step = 0;
    double train_loss = 0.0;
    double dev_metric = 0.0;

    bool operator==(const EvalPoint&) const = default;
};

struct RunRecord {
    std::string config_digest;
    std::uint64_t seed = 0;
    std::string metric;
    std::vector<EvalPoint> evaluations;
    std::int64_t selected_step = -1;
    int selected_epoch = -1;
    double final_metric = 0.0;
    double wall_seconds = 0.0;
    std::vector<std::string> warnings;

    /// Field-wise equality ignoring wall-clock time.
    bool same_results(const RunRecord& other) const;
};

struct MetricValue {
    double value = 0.0;
    bool degenerate = false; // metric was undefined and pinned to 0
};

MetricValue compute_metric(const std::vector<int>& predictions, const std::vector<int>& golds,
                           int num_classes, MetricKind metric);

MetricValue evaluate(model::EncoderModel& m, const std::vector<data::LabeledExample>& split,
                     MetricKind metric, int batch_size = 32);

/// Mean cross-entropy of the classifier over a split, eval mode.
double dataset_loss(model::EncoderModel& m, const std::vector<data::LabeledExample>& split,
                    int batch_size = 32);

/// Supervised training with seeded shuffling, the linear schedule, dev
/// evaluation on the configured cadence, and best-dev checkpoint selection
/// (earliest on ties). The model is left at the selected checkpoint;
/// final_metric is the test metric of that checkpoint.
RunRecord train(model::EncoderModel& m, const data::TaskDataset& dataset,
                const TuningPolicy& policy, const TrainConfig& cfg);

/// Masked-LM pretraining over an unlabeled corpus with dynamic per-epoch
/// masking. Loss is tracked on a fixed masked snapshot of the corpus; the
/// recorded dev_metric is the negated MLM loss so that higher stays better.
/// The model keeps its final weights.
RunRecord tapt_pretrain(model::EncoderModel& m, const data::TokenizedCorpus& corpus,
                        const TuningPolicy& policy, const TrainConfig& cfg);

} // namespace adapterlab::tuning
