#include "adapterlab/model.hpp"

#include <cmath>
#include <stdexcept>

namespace adapterlab::model {

namespace {

constexpr double kNormEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr double kAdapterDownStd = 1e-3;
constexpr double kMaskFill = -1e9;

void require_positive(int v, const char* what) {
    if (v <= 0)
        throw std::runtime_error(std::string(what) + " must be positive, got " + std::to_string(v));
}

} // namespace

void TransformerConfig::validate() const {
    require_positive(num_layers, "num_layers");
    require_positive(model_dim, "model_dim");
    require_positive(num_heads, "num_heads");
    require_positive(ffn_dim, "ffn_dim");
    require_positive(vocab_size, "vocab_size");
    require_positive(max_seq_len, "max_seq_len");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw std::runtime_error("dropout_rate must lie in [0,1), got " + std::to_string(dropout_rate));
    if (model_dim % num_heads != 0)
        throw std::runtime_error("model_dim " + std::to_string(model_dim) +
                                 " is not divisible by num_heads " + std::to_string(num_heads));
}

Tensor adapter_forward(const Tensor& h, const AdapterLayer& adapter) {
    if (h.rank() < 1) throw std::runtime_error("adapter input needs rank >= 1");
    int d = h.shape().back();
    if (adapter.down_w.rank() != 2 || adapter.down_w.dim(0) != d)
        throw std::runtime_error("adapter down-projection expects input dimension " +
                                 std::to_string(adapter.down_w.rank() == 2 ? adapter.down_w.dim(0) : -1) +
                                 " but the input has " + std::to_string(d));
    int m = adapter.down_w.dim(1);
    if (adapter.down_b.rank() != 1 || adapter.down_b.dim(0) != m ||
        adapter.up_w.rank() != 2 || adapter.up_w.dim(0) != m || adapter.up_w.dim(1) != d ||
        adapter.up_b.rank() != 1 || adapter.up_b.dim(0) != d)
        throw std::runtime_error("adapter weight shapes are inconsistent: down " +
                                 adapter.down_w.shape_str() + ", up " + adapter.up_w.shape_str());
    int rows = static_cast<int>(h.size() / d);
    Tensor mid({rows, m});
    core::gemm_nn(h.data(), adapter.down_w.data(), mid.data(), rows, d, m, false);
    for (int r = 0; r < rows; ++r) {
        double* row = mid.data() + static_cast<std::int64_t>(r) * m;
        for (int j = 0; j < m; ++j) row[j] = std::tanh(row[j] + adapter.down_b[j]);
    }
    Tensor out = h;
    core::gemm_nn(mid.data(), adapter.up_w.data(), out.data(), rows, m, d, true);
    for (int r = 0; r < rows; ++r) {
        double* row = out.data() + static_cast<std::int64_t>(r) * d;
        for (int j = 0; j < d; ++j) row[j] += adapter.up_b[j];
    }
    require_finite(out, "adapter_forward");
    return out;
}

EncoderModel::EncoderModel(TransformerConfig cfg, std::optional<AdapterConfig> adapter,
                           int num_classes, std::uint64_t seed)
    : cfg_(cfg), adapter_(adapter), num_classes_(num_classes), seed_(seed) {
    cfg_.validate();
    if (num_classes_ < 2)
        throw std::runtime_error("classifier needs at least 2 classes, got " + std::to_string(num_classes_));
    if (adapter_) {
        if (adapter_->hidden_size <= 0 || adapter_->hidden_size >= cfg_.model_dim)
            throw std::runtime_error("adapter hidden_size must satisfy 0 < m < model_dim, got m=" +
                                     std::to_string(adapter_->hidden_size) + " with model_dim " +
                                     std::to_string(cfg_.model_dim));
        if (!adapter_->insert_after_attention && !adapter_->insert_after_ffn)
            throw std::runtime_error("adapter config enables no insertion point");
    }

    // Base weights draw from their own stream so a model with adapters gets
    // bit-identical base initialization to one without.
    Rng root(seed_);
    Rng base_rng = root.fork("init.base");
    Rng adapter_rng = root.fork("init.adapter");

    int d = cfg_.model_dim;

    auto add_linear = [&](const std::string& name, int in, int out, ParamRole role, Rng& rng,
                          double stddev) {
        Tensor w({in, out});
        init_normal(w, rng, stddev);
        add_param(name + ".weight", std::move(w), core::ParamKind::linear_weight, role);
        add_param(name + ".bias", Tensor({out}), core::ParamKind::bias, role);
    };
    auto add_norm = [&](const std::string& name) {
        add_param(name + ".gain", Tensor::full({d}, 1.0), core::ParamKind::norm_gain,
                  ParamRole::layer_norm);
        add_param(name + ".bias", Tensor({d}), core::ParamKind::norm_bias, ParamRole::layer_norm);
    };
    auto add_adapter = [&](const std::string& name) {
        int m = adapter_->hidden_size;
        Tensor down({d, m});
        init_normal(down, adapter_rng, kAdapterDownStd);
        add_param(name + ".down.weight", std::move(down), core::ParamKind::linear_weight,
                  ParamRole::adapter);
        add_param(name + ".down.bias", Tensor({m}), core::ParamKind::bias, ParamRole::adapter);
        // Zero up-projection makes the whole module start as the identity.
        add_param(name + ".up.weight", Tensor({m, d}), core::ParamKind::linear_weight,
                  ParamRole::adapter);
        add_param(name + ".up.bias", Tensor({d}), core::ParamKind::bias, ParamRole::adapter);
    };

    Tensor tok({cfg_.vocab_size, d});
    init_normal(tok, base_rng, kInitStd);
    add_param("embedding.token.weight", std::move(tok), core::ParamKind::embedding,
              ParamRole::backbone);
    Tensor pos({cfg_.max_seq_len, d});
    init_normal(pos, base_rng, kInitStd);
    add_param("embedding.position.weight", std::move(pos), core::ParamKind::embedding,
              ParamRole::backbone);

    for (int i = 0; i < cfg_.num_layers; ++i) {
        std::string prefix = "layer." + std::to_string(i);
        add_linear(prefix + ".attention.query", d, d, ParamRole::backbone, base_rng, kInitStd);
        add_linear(prefix + ".attention.key", d, d, ParamRole::backbone, base_rng, kInitStd);
        add_linear(prefix + ".attention.value", d, d, ParamRole::backbone, base_rng, kInitStd);
        add_linear(prefix + ".attention.output", d, d, ParamRole::backbone, base_rng, kInitStd);
        if (adapter_ && adapter_->insert_after_attention) add_adapter(prefix + ".adapter_attn");
        add_norm(prefix + ".norm_attn");
        add_linear(prefix + ".ffn.in", d, cfg_.ffn_dim, ParamRole::backbone, base_rng, kInitStd);
        add_linear(prefix + ".ffn.out", cfg_.ffn_dim, d, ParamRole::backbone, base_rng, kInitStd);
        if (adapter_ && adapter_->insert_after_ffn) add_adapter(prefix + ".adapter_ffn");
        add_norm(prefix + ".norm_ffn");
    }

    add_linear("head.cls", d, num_classes_, ParamRole::head_classifier, base_rng, kInitStd);
    add_linear("head.mlm", d, cfg_.vocab_size, ParamRole::head_mlm, base_rng, kInitStd);
}

Parameter& EncoderModel::add_param(std::string name, Tensor value, core::ParamKind kind,
                                   ParamRole role) {
    index_.emplace(name, params_.size());
    params_.emplace_back(std::move(name), std::move(value), kind);
    roles_.push_back(role);
    return params_.back();
}

void EncoderModel::init_normal(Tensor& t, Rng& rng, double stddev) {
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
}

Parameter& EncoderModel::param(std::string_view name) {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::runtime_error("model has no parameter named " + std::string(name));
    return params_[it->second];
}

const Parameter& EncoderModel::param(std::string_view name) const {
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::runtime_error("model has no parameter named " + std::string(name));
    return params_[it->second];
}

bool EncoderModel::has_param(std::string_view name) const {
    return index_.find(name) != index_.end();
}

void EncoderModel::check_batch(const TokenBatch& batch) const {
    if (batch.batch <= 0 || batch.seq <= 0)
        throw std::runtime_error("token batch must be non-empty");
    if (batch.seq > cfg_.max_seq_len)
        throw std::runtime_error("sequence length " + std::to_string(batch.seq) +
                                 " exceeds max_seq_len " + std::to_string(cfg_.max_seq_len));
    if (static_cast<std::int64_t>(batch.ids.size()) !=
        static_cast<std::int64_t>(batch.batch) * batch.seq)
        throw std::runtime_error("token batch holds " + std::to_string(batch.ids.size()) +
                                 " ids but batch x seq is " +
                                 std::to_string(batch.batch) + "x" + std::to_string(batch.seq));
}

Var EncoderModel::weight_var(Tape& tape, Parameter& p, const ForwardCtx& ctx) {
    if (ctx.training && ctx.mixout_p > 0.0 && !p.frozen &&
        p.kind == core::ParamKind::linear_weight) {
        core::MixoutMask mask;
        mask.p = ctx.mixout_p;
        mask.compensate = ctx.mixout_compensate;
        auto rows = static_cast<std::size_t>(p.value.dim(0));
        mask.kept.resize(rows);
        for (std::size_t r = 0; r < rows; ++r)
            mask.kept[r] = ctx.mixout->uniform() >= ctx.mixout_p ? 1 : 0;
        return tape.mixout_rows(p, mask);
    }
    return tape.leaf(p);
}

EncoderModel::Forward EncoderModel::build_forward(Tape& tape, const TokenBatch& batch,
                                                  const ForwardCtx& ctx) {
    check_batch(batch);
    const int b = batch.batch, s = batch.seq, d = cfg_.model_dim;
    const int heads = cfg_.num_heads, hd = d / heads;
    const double rate = (ctx.training && ctx.mixout_p == 0.0) ? cfg_.dropout_rate : 0.0;
    if (rate > 0.0 && !ctx.dropout)
        throw std::runtime_error("training forward requires a dropout stream");
    if (ctx.training && ctx.mixout_p > 0.0 && !ctx.mixout)
        throw std::runtime_error("mixout requires a random stream");

    auto drop = [&](Var v) { return rate > 0.0 ? tape.dropout(v, rate, *ctx.dropout) : v; };
    auto pvar = [&](const std::string& name) { return weight_var(tape, param(name), ctx); };
    auto dense = [&](Var x, const std::string& name) {
        return tape.linear(x, pvar(name + ".weight"), pvar(name + ".bias"));
    };
    auto adapter_block = [&](Var x, const std::string& name) {
        Var down = tape.tanh(dense(x, name + ".down"));
        return tape.add(dense(down, name + ".up"), x);
    };

    std::vector<int> pos_ids(static_cast<std::size_t>(b) * s);
    for (std::size_t i = 0; i < pos_ids.size(); ++i) pos_ids[i] = static_cast<int>(i % s);
    Var tok = tape.embedding_rows(pvar("embedding.token.weight"), batch.ids);
    Var pos = tape.embedding_rows(pvar("embedding.position.weight"), pos_ids);
    Var x = tape.reshape(drop(tape.add(tok, pos)), {b, s, d});

    // Key positions holding [PAD] are excluded from attention via a large
    // negative additive mask.
    bool any_pad = false;
    for (int id : batch.ids)
        if (id == 0) { any_pad = true; break; }
    Var mask{};
    if (any_pad) {
        Tensor m({b * heads, s, s});
        for (int bi = 0; bi < b; ++bi)
            for (int j = 0; j < s; ++j) {
                if (batch.id_at(bi, j) != 0) continue;
                for (int hh = 0; hh < heads; ++hh) {
                    double* block = m.data() +
                                    (static_cast<std::int64_t>(bi) * heads + hh) * s * s;
                    for (int qi = 0; qi < s; ++qi) block[static_cast<std::int64_t>(qi) * s + j] = kMaskFill;
                }
            }
        mask = tape.constant(std::move(m));
    }

    Forward fwd;
    fwd.hidden.reserve(static_cast<std::size_t>(cfg_.num_layers) + 1);
    fwd.hidden.push_back(x);

    auto split_heads = [&](Var v) {
        return tape.reshape(tape.permute(tape.reshape(v, {b, s, heads, hd}), {0, 2, 1, 3}),
                            {b * heads, s, hd});
    };

    for (int i = 0; i < cfg_.num_layers; ++i) {
        std::string prefix = "layer." + std::to_string(i);

        Var q = split_heads(dense(x, prefix + ".attention.query"));
        Var k = split_heads(dense(x, prefix + ".attention.key"));
        Var v = split_heads(dense(x, prefix + ".attention.value"));
        Var scores = tape.scale(tape.bmm(q, k, true), 1.0 / std::sqrt(static_cast<double>(hd)));
        if (any_pad) scores = tape.add(scores, mask);
        Var probs = drop(tape.softmax_rows(scores));
        Var ctxv = tape.bmm(probs, v);
        ctxv = tape.reshape(tape.permute(tape.reshape(ctxv, {b, heads, s, hd}), {0, 2, 1, 3}),
                            {b, s, d});
        Var attn = drop(dense(ctxv, prefix + ".attention.output"));
        if (adapter_ && adapter_->insert_after_attention)
            attn = adapter_block(attn, prefix + ".adapter_attn");
        x = tape.layer_norm(tape.add(x, attn), pvar(prefix + ".norm_attn.gain"),
                            pvar(prefix + ".norm_attn.bias"), kNormEps);

        Var f = drop(dense(tape.gelu(dense(x, prefix + ".ffn.in")), prefix + ".ffn.out"));
        if (adapter_ && adapter_->insert_after_ffn)
            f = adapter_block(f, prefix + ".adapter_ffn");
        x = tape.layer_norm(tape.add(x, f), pvar(prefix + ".norm_ffn.gain"),
                            pvar(prefix + ".norm_ffn.bias"), kNormEps);

        fwd.hidden.push_back(x);
    }

    fwd.last2d = tape.reshape(x, {b * s, d});
    std::vector<int> first_rows(static_cast<std::size_t>(b));
    for (int bi = 0; bi < b; ++bi) first_rows[static_cast<std::size_t>(bi)] = bi * s;
    fwd.pooled = tape.select_rows(fwd.last2d, first_rows);
    return fwd;
}

Var EncoderModel::classifier_logits(Tape& tape, const Forward& fwd, const ForwardCtx& ctx) {
    const double rate = (ctx.training && ctx.mixout_p == 0.0) ? cfg_.dropout_rate : 0.0;
    Var pooled = rate > 0.0 ? tape.dropout(fwd.pooled, rate, *ctx.dropout) : fwd.pooled;
    return tape.linear(pooled, weight_var(tape, param("head.cls.weight"), ctx),
                       weight_var(tape, param("head.cls.bias"), ctx));
}

Var EncoderModel::mlm_logits(Tape& tape, const Forward& fwd, const std::vector<int>& rows,
                             const ForwardCtx& ctx) {
    Var sel = tape.select_rows(fwd.last2d, rows);
    return tape.linear(sel, weight_var(tape, param("head.mlm.weight"), ctx),
                       weight_var(tape, param("head.mlm.bias"), ctx));
}

EncoderOutputs EncoderModel::forward_values(const TokenBatch& batch, bool training, Rng* dropout) {
    Tape tape;
    ForwardCtx ctx;
    ctx.training = training;
    ctx.dropout = dropout;
    Forward fwd = build_forward(tape, batch, ctx);
    EncoderOutputs out;
    out.hidden.reserve(fwd.hidden.size());
    for (Var h : fwd.hidden) out.hidden.push_back(tape.val(h));
    out.pooled = tape.val(fwd.pooled);
    return out;
}

EncoderModel EncoderModel::with_adapters(const AdapterConfig& adapter) const {
    if (adapter_) throw std::runtime_error("model already has adapters");
    EncoderModel grafted(cfg_, adapter, num_classes_, seed_);
    for (std::size_t i = 0; i < grafted.params_.size(); ++i) {
        Parameter& p = grafted.params_[i];
        if (grafted.roles_[i] == ParamRole::adapter) continue; // keeps its fresh init
        p.value = param(p.name).value;
        p.initial = p.value;
        p.frozen = false;
    }
    return grafted;
}

void EncoderModel::rebase_initials() {
    for (Parameter& p : params_) p.initial = p.value;
}

EncoderOutputs encoder_forward(EncoderModel& model, const TokenBatch& batch, bool training,
                               Rng* dropout) {
    return model.forward_values(batch, training, dropout);
}

ParameterCount count_parameters(const EncoderModel& model, CountFilter filter) {
    std::int64_t all = 0, filtered = 0;
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::int64_t n = params[i].value.size();
        all += n;
        switch (filter) {
        case CountFilter::all: filtered += n; break;
        case CountFilter::trainable:
            if (!params[i].frozen) filtered += n;
            break;
        case CountFilter::adapters:
            if (model.role(i) == ParamRole::adapter) filtered += n;
            break;
        }
    }
    ParameterCount out;
    out.count = filtered;
    out.fraction = all == 0 ? 0.0 : static_cast<double>(filtered) / static_cast<double>(all);
    return out;
}

ParameterCount count_parameters(const TransformerConfig& cfg,
                                const std::optional<AdapterConfig>& adapter, int num_classes,
                                CountFilter filter) {
    cfg.validate();
    if (num_classes < 2) throw std::runtime_error("num_classes must be at least 2");
    auto d = static_cast<std::int64_t>(cfg.model_dim);
    auto layers = static_cast<std::int64_t>(cfg.num_layers);
    auto ffn = static_cast<std::int64_t>(cfg.ffn_dim);
    auto vocab = static_cast<std::int64_t>(cfg.vocab_size);

    std::int64_t adapter_per_layer = 0;
    if (adapter) {
        auto m = static_cast<std::int64_t>(adapter->hidden_size);
        std::int64_t one = d * m + m + m * d + d;
        adapter_per_layer = (adapter->insert_after_attention ? one : 0) +
                            (adapter->insert_after_ffn ? one : 0);
    }
    std::int64_t adapters = layers * adapter_per_layer;
    std::int64_t norms = layers * 2 * 2 * d;
    std::int64_t attention = layers * 4 * (d * d + d);
    std::int64_t feed_forward = layers * (d * ffn + ffn + ffn * d + d);
    std::int64_t embeddings = vocab * d + static_cast<std::int64_t>(cfg.max_seq_len) * d;
    std::int64_t cls_head = d * num_classes + num_classes;
    std::int64_t mlm_head = d * vocab + vocab;
    std::int64_t all = embeddings + attention + feed_forward + norms + adapters + cls_head + mlm_head;

    std::int64_t filtered = 0;
    switch (filter) {
    case CountFilter::all: filtered = all; break;
    case CountFilter::adapters: filtered = adapters; break;
    case CountFilter::trainable: filtered = adapters + norms + cls_head; break;
    }
    ParameterCount out;
    out.count = filtered;
    out.fraction = all == 0 ? 0.0 : static_cast<double>(filtered) / static_cast<double>(all);
    return out;
}

} // namespace adapterlab::model
