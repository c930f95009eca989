#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adapterlab/autodiff.hpp"

namespace adapterlab::model {

using core::Parameter;
using core::Rng;
using core::Tape;
using core::Tensor;
using core::Var;

struct TransformerConfig {
    int num_layers = 2;
    int model_dim = 32;
    int num_heads = 2;
    int ffn_dim = 128;
    int vocab_size = 0;
    int max_seq_len = 128;
    double dropout_rate = 0.1;

    void validate() const;
    bool operator==(const TransformerConfig&) const = default;
};

/// Bottleneck adapter: down-projection to hidden_size, tanh, up-projection,
/// skip connection. One instance sits after self-attention, one after the
/// feed-forward block, per layer (both optional).
struct AdapterConfig {
    int hidden_size = 8;
    bool insert_after_attention = true;
    bool insert_after_ffn = true;

    bool operator==(const AdapterConfig&) const = default;
};

/// Plain-value adapter weights for the standalone forward below.
/// down_w is {d,m}, up_w is {m,d}; biases match the projection outputs.
struct AdapterLayer {
    Tensor down_w;
    Tensor down_b;
    Tensor up_w;
    Tensor up_b;
};

/// h' = up(tanh(down(h))) + h applied to each trailing-dimension row.
Tensor adapter_forward(const Tensor& h, const AdapterLayer& adapter);

/// Row-major token ids, batch x seq.
struct TokenBatch {
    int batch = 0;
    int seq = 0;
    std::vector<int> ids;

    int id_at(int b, int pos) const { return ids[static_cast<std::size_t>(b) * seq + pos]; }
};

enum class HeadKind : std::uint8_t { classifier, mlm };

enum class ParamRole : std::uint8_t { backbone, adapter, layer_norm, head_classifier, head_mlm };

/// Per-forward behavior switches. When mixout_p > 0 (training only) every
/// trainable linear weight is stochastically pulled toward its initial value
/// and dropout is disabled, mirroring the swap of regularizers.
struct ForwardCtx {
    bool training = false;
    Rng* dropout = nullptr;
    Rng* mixout = nullptr;
    double mixout_p = 0.0;
    bool mixout_compensate = true;
};

struct EncoderOutputs {
    std::vector<Tensor> hidden; // N+1 tensors, each {batch,seq,d}
    Tensor pooled;              // {batch,d} first-token rows of the final layer
};

/// Post-norm transformer encoder with optional per-layer adapters, a
/// classification head over the first-token representation, and an untied
/// masked-LM head.
class EncoderModel {
public:
    EncoderModel(TransformerConfig cfg, std::optional<AdapterConfig> adapter,
                 int num_classes, std::uint64_t seed);

    const TransformerConfig& config() const { return cfg_; }
    const std::optional<AdapterConfig>& adapter_config() const { return adapter_; }
    int num_classes() const { return num_classes_; }
    std::uint64_t seed() const { return seed_; }

    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    ParamRole role(std::size_t index) const { return roles_[index]; }
    Parameter& param(std::string_view name);
    const Parameter& param(std::string_view name) const;
    bool has_param(std::string_view name) const;

    struct Forward {
        std::vector<Var> hidden; // N+1 vars {batch,seq,d}
        Var last2d;              // {batch*seq,d}
        Var pooled;              // {batch,d}
    };

    Forward build_forward(Tape& tape, const TokenBatch& batch, const ForwardCtx& ctx);
    /// {batch,num_classes} from the pooled representation.
    Var classifier_logits(Tape& tape, const Forward& fwd, const ForwardCtx& ctx);
    /// {rows.size(),vocab} vocabulary logits at flattened batch*seq positions.
    Var mlm_logits(Tape& tape, const Forward& fwd, const std::vector<int>& rows,
                   const ForwardCtx& ctx);

    /// Value-level forward (no graph kept). Training mode needs a dropout
    /// stream when dropout_rate > 0.
    EncoderOutputs forward_values(const TokenBatch& batch, bool training = false,
                                  Rng* dropout = nullptr);

    EncoderModel clone() const { return *this; }

    /// Copy of this adapter-free model with freshly initialized adapters
    /// grafted in: base weights are copied bit-exactly and every initial
    /// snapshot is reset to the copied value, so the grafted model starts as
    /// the identity extension of this one.
    EncoderModel with_adapters(const AdapterConfig& adapter) const;

    /// Marks the current values as the reference state that freezing checks,
    /// mixout, and representation-drift analyses compare against.
    void rebase_initials();

private:
    Parameter& add_param(std::string name, Tensor value, core::ParamKind kind, ParamRole role);
    void init_normal(Tensor& t, Rng& rng, double stddev);
    Var weight_var(Tape& tape, Parameter& p, const ForwardCtx& ctx);
    void check_batch(const TokenBatch& batch) const;

    TransformerConfig cfg_;
    std::optional<AdapterConfig> adapter_;
    int num_classes_ = 2;
    std::uint64_t seed_ = 0;
    std::vector<Parameter> params_;
    std::vector<ParamRole> roles_;
    std::map<std::string, std::size_t, std::less<>> index_;
};

/// Per-layer hidden states plus the pooled first-token representation, in
/// eval mode by default.
EncoderOutputs encoder_forward(EncoderModel& model, const TokenBatch& batch,
                               bool training = false, Rng* dropout = nullptr);

enum class CountFilter : std::uint8_t { all, trainable, adapters };

struct ParameterCount {
    std::int64_t count = 0;
    double fraction = 0.0; // filtered / all
};

ParameterCount count_parameters(const EncoderModel& model, CountFilter filter);

/// Closed-form counts from the configuration alone, with no tensors built —
/// cheap even at full pretrained-model scale. filter=trainable means the
/// adapter-tuning trainable set with the classifier head active (adapters,
/// layer norms, classifier); under full fine-tuning everything is trainable.
ParameterCount count_parameters(const TransformerConfig& cfg,
                                const std::optional<AdapterConfig>& adapter, int num_classes,
                                CountFilter filter);

} // namespace adapterlab::model
