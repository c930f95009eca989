#include "adapterlab/tuning.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace adapterlab::tuning {

namespace {

constexpr double kFullFinetuneLr = 2e-5;
constexpr double kAdapterLr = 1e-4;
constexpr int kTaptEvalSequences = 256;

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

void validate_config(const TrainConfig& cfg) {
    if (cfg.epochs <= 0) throw std::runtime_error("epochs must be positive");
    if (cfg.batch_size <= 0) throw std::runtime_error("batch_size must be positive");
    if (cfg.warmup_fraction < 0.0 || cfg.warmup_fraction >= 1.0)
        throw std::runtime_error("warmup_fraction must lie in [0,1)");
    if (cfg.eval_every < 0) throw std::runtime_error("eval_every cannot be negative");
    if (cfg.max_steps < 0) throw std::runtime_error("max_steps cannot be negative");
    if (cfg.peak_lr < 0.0) throw std::runtime_error("peak_lr cannot be negative");
}

std::string run_digest(const char* kind, const model::EncoderModel& m, const TuningPolicy& policy,
                       const TrainConfig& cfg, const std::string& data_note) {
    std::ostringstream os;
    os.precision(17);
    const auto& mc = m.config();
    os << kind << '|' << policy.name() << '|';
    if (policy.adapter)
        os << "m=" << policy.adapter->hidden_size << ",attn=" << policy.adapter->insert_after_attention
           << ",ffn=" << policy.adapter->insert_after_ffn << '|';
    if (policy.mixout)
        os << "p=" << policy.mixout->probability << ",comp=" << policy.mixout->compensate << '|';
    os << "model=" << mc.num_layers << 'x' << mc.model_dim << 'h' << mc.num_heads << 'f'
       << mc.ffn_dim << 'v' << mc.vocab_size << 's' << mc.max_seq_len << 'd' << mc.dropout_rate
       << ",classes=" << m.num_classes() << ",mseed=" << m.seed() << '|'
       << "epochs=" << cfg.epochs << ",batch=" << cfg.batch_size << ",lr=" << cfg.peak_lr
       << ",warmup=" << cfg.warmup_fraction << ",eval=" << cfg.eval_every
       << ",max_steps=" << cfg.max_steps << ",metric=" << metric_name(cfg.metric)
       << ",seed=" << cfg.seed << '|' << data_note;
    return hex64(core::fnv1a64(os.str()));
}

} // namespace

TuningPolicy TuningPolicy::full_finetune(std::optional<MixoutConfig> mix) {
    TuningPolicy p;
    p.base = TuningBase::full_finetune;
    p.mixout = mix;
    return p;
}

TuningPolicy TuningPolicy::adapter_tuning(model::AdapterConfig cfg, std::optional<MixoutConfig> mix) {
    TuningPolicy p;
    p.base = TuningBase::adapter_tuning;
    p.adapter = cfg;
    p.mixout = mix;
    return p;
}

std::string TuningPolicy::name() const {
    std::string n = base == TuningBase::full_finetune ? "finetune" : "adapter";
    if (mixout) n += "-mixout";
    return n;
}

PartitionReport apply_tuning_policy(model::EncoderModel& m, const TuningPolicy& policy,
                                    model::HeadKind active_head) {
    if (policy.base == TuningBase::adapter_tuning) {
        if (!policy.adapter)
            throw std::runtime_error("adapter tuning policy is missing its adapter config");
        if (!m.adapter_config())
            throw std::runtime_error("adapter tuning policy applied to a model built without adapters");
        if (!(*policy.adapter == *m.adapter_config()))
            throw std::runtime_error("policy adapter config does not match the model's adapters");
    } else {
        if (m.adapter_config())
            throw std::runtime_error("full fine-tuning policy applied to a model built with adapters");
    }
    if (policy.mixout &&
        (policy.mixout->probability < 0.0 || policy.mixout->probability >= 1.0))
        throw std::runtime_error("mixout probability must lie in [0,1), got " +
                                 std::to_string(policy.mixout->probability));

    model::ParamRole head_role = active_head == model::HeadKind::classifier
                                     ? model::ParamRole::head_classifier
                                     : model::ParamRole::head_mlm;
    PartitionReport report;
    auto& params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        bool trainable;
        if (policy.base == TuningBase::full_finetune) {
            trainable = true;
        } else {
            model::ParamRole role = m.role(i);
            trainable = role == model::ParamRole::adapter || role == model::ParamRole::layer_norm ||
                        role == head_role;
        }
        params[i].frozen = !trainable;
        (trainable ? report.trainable : report.frozen).push_back(params[i].name);
    }
    return report;
}

MetricKind metric_from_string(std::string_view s) {
    if (s == "accuracy") return MetricKind::accuracy;
    if (s == "macro_f1") return MetricKind::macro_f1;
    if (s == "micro_f1") return MetricKind::micro_f1;
    if (s == "mcc") return MetricKind::mcc;
    throw std::runtime_error("unknown metric " + std::string(s) +
                             " (expected accuracy, macro_f1, micro_f1, or mcc)");
}

std::string metric_name(MetricKind m) {
    switch (m) {
    case MetricKind::accuracy: return "accuracy";
    case MetricKind::macro_f1: return "macro_f1";
    case MetricKind::micro_f1: return "micro_f1";
    case MetricKind::mcc: return "mcc";
    }
    return "accuracy";
}

double resolve_peak_lr(const TrainConfig& cfg, const TuningPolicy& policy) {
    if (cfg.peak_lr > 0.0) return cfg.peak_lr;
    return policy.base == TuningBase::adapter_tuning ? kAdapterLr : kFullFinetuneLr;
}

double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& cfg) {
    if (total_steps <= 0) throw std::runtime_error("total_steps must be positive");
    if (step < 0 || step > total_steps)
        throw std::runtime_error("step " + std::to_string(step) + " outside [0," +
                                 std::to_string(total_steps) + "]");
    if (cfg.peak_lr <= 0.0)
        throw std::runtime_error("peak_lr must be resolved to a positive value before scheduling");
    if (cfg.warmup_fraction < 0.0 || cfg.warmup_fraction >= 1.0)
        throw std::runtime_error("warmup_fraction must lie in [0,1)");
    double warmup = cfg.warmup_fraction * static_cast<double>(total_steps);
    double s = static_cast<double>(step);
    if (warmup > 0.0 && s <= warmup) return cfg.peak_lr * s / warmup;
    return cfg.peak_lr * (static_cast<double>(total_steps) - s) /
           (static_cast<double>(total_steps) - warmup);
}

OptimizerState::OptimizerState(const std::vector<Parameter>& params) {
    m.reserve(params.size());
    v.reserve(params.size());
    for (const Parameter& p : params) {
        m.push_back(Tensor::zeros(p.value.shape()));
        v.push_back(Tensor::zeros(p.value.shape()));
    }
}

void adam_step(std::vector<Parameter>& params, OptimizerState& state, double lr) {
    if (state.m.size() != params.size())
        throw std::runtime_error("optimizer state covers " + std::to_string(state.m.size()) +
                                 " parameters but the model has " + std::to_string(params.size()));
    ++state.step;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = params[i];
        if (p.frozen) continue;
        Tensor& m = state.m[i];
        Tensor& v = state.v[i];
        for (std::int64_t j = 0; j < p.value.size(); ++j) {
            double g = p.grad[j];
            if (!std::isfinite(g))
                throw std::runtime_error("non-finite gradient for parameter " + p.name);
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p.value[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
        }
        require_finite(p.value, ("adam update of " + p.name).c_str());
    }
}

Tensor mixout_effective_weight(const Tensor& w, const Tensor& w0, double p,
                               const std::vector<std::uint8_t>& replaced, bool compensate) {
    if (p < 0.0 || p >= 1.0)
        throw std::runtime_error("mixout probability must lie in [0,1), got " + std::to_string(p));
    if (w.rank() != 2 || !w.same_shape(w0))
        throw std::runtime_error("mixout weights must be matching 2-D tensors, got " +
                                 w.shape_str() + " and " + w0.shape_str());
    if (p == 0.0) return w;
    int out = w.dim(0), in = w.dim(1);
    if (static_cast<int>(replaced.size()) != in)
        throw std::runtime_error("mixout mask covers " + std::to_string(replaced.size()) +
                                 " input neurons but the weight has " + std::to_string(in));
    Tensor eff = w0;
    double inv_keep = 1.0 / (1.0 - p);
    for (int r = 0; r < out; ++r) {
        std::int64_t base = static_cast<std::int64_t>(r) * in;
        for (int c = 0; c < in; ++c) {
            if (replaced[static_cast<std::size_t>(c)]) continue;
            std::int64_t idx = base + c;
            // w0 + (w - w0)/(1-p) equals (w - p*w0)/(1-p) but keeps w == w0 a
            // bit-exact fixed point.
            eff[idx] = compensate ? w0[idx] + (w[idx] - w0[idx]) * inv_keep : w[idx];
        }
    }
    return eff;
}

bool RunRecord::same_results(const RunRecord& other) const {
    return config_digest == other.config_digest && seed == other.seed && metric == other.metric &&
           evaluations == other.evaluations && selected_step == other.selected_step &&
           selected_epoch == other.selected_epoch && final_metric == other.final_metric &&
           warnings == other.warnings;
}

MetricValue compute_metric(const std::vector<int>& predictions, const std::vector<int>& golds,
                           int num_classes, MetricKind metric) {
    if (predictions.size() != golds.size())
        throw std::runtime_error("prediction and gold counts differ");
    if (predictions.empty()) throw std::runtime_error("cannot score an empty prediction list");
    auto n = static_cast<double>(predictions.size());
    auto c = static_cast<std::size_t>(num_classes);
    std::vector<double> conf(c * c, 0.0); // gold-major
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        int pr = predictions[i], go = golds[i];
        if (pr < 0 || pr >= num_classes || go < 0 || go >= num_classes)
            throw std::runtime_error("label outside [0," + std::to_string(num_classes) +
                                     ") at position " + std::to_string(i));
        conf[static_cast<std::size_t>(go) * c + static_cast<std::size_t>(pr)] += 1.0;
    }
    double correct = 0.0;
    for (std::size_t k = 0; k < c; ++k) correct += conf[k * c + k];

    MetricValue out;
    switch (metric) {
    case MetricKind::accuracy:
        out.value = correct / n;
        break;
    case MetricKind::micro_f1: {
        double fp = n - correct, fn = n - correct;
        out.value = 2.0 * correct / (2.0 * correct + fp + fn);
        break;
    }
    case MetricKind::macro_f1: {
        double sum = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            double tp = conf[k * c + k], pred_k = 0.0, gold_k = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                pred_k += conf[j * c + k];
                gold_k += conf[k * c + j];
            }
            double prec = pred_k > 0.0 ? tp / pred_k : 0.0;
            double rec = gold_k > 0.0 ? tp / gold_k : 0.0;
            sum += (prec + rec) > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0;
        }
        out.value = sum / static_cast<double>(c);
        break;
    }
    case MetricKind::mcc: {
        std::vector<double> pred_k(c, 0.0), gold_k(c, 0.0);
        for (std::size_t g = 0; g < c; ++g)
            for (std::size_t pr = 0; pr < c; ++pr) {
                pred_k[pr] += conf[g * c + pr];
                gold_k[g] += conf[g * c + pr];
            }
        double dot = 0.0, p2 = 0.0, t2 = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            dot += pred_k[k] * gold_k[k];
            p2 += pred_k[k] * pred_k[k];
            t2 += gold_k[k] * gold_k[k];
        }
        double denom = std::sqrt((n * n - p2) * (n * n - t2));
        if (denom == 0.0) {
            out.value = 0.0;
            out.degenerate = true;
        } else {
            out.value = (correct * n - dot) / denom;
        }
        break;
    }
    }
    return out;
}

MetricValue evaluate(model::EncoderModel& m, const std::vector<data::LabeledExample>& split,
                     MetricKind metric, int batch_size) {
    if (split.empty()) throw std::runtime_error("cannot evaluate an empty split");
    data::LabeledBatches batches = data::make_batches(split, batch_size, nullptr);
    std::vector<int> preds, golds;
    preds.reserve(split.size());
    golds.reserve(split.size());
    model::ForwardCtx ctx; // eval mode
    for (std::size_t bi = 0; bi < batches.batches.size(); ++bi) {
        core::Tape tape;
        auto fwd = m.build_forward(tape, batches.batches[bi], ctx);
        const Tensor& logits = tape.val(m.classifier_logits(tape, fwd, ctx));
        int rows = logits.dim(0), cols = logits.dim(1);
        for (int r = 0; r < rows; ++r) {
            const double* row = logits.data() + static_cast<std::int64_t>(r) * cols;
            int arg = 0;
            for (int j = 1; j < cols; ++j)
                if (row[j] > row[arg]) arg = j;
            preds.push_back(arg);
            golds.push_back(batches.labels[bi][static_cast<std::size_t>(r)]);
        }
    }
    return compute_metric(preds, golds, m.num_classes(), metric);
}

double dataset_loss(model::EncoderModel& m, const std::vector<data::LabeledExample>& split,
                    int batch_size) {
    if (split.empty()) throw std::runtime_error("cannot compute the loss of an empty split");
    data::LabeledBatches batches = data::make_batches(split, batch_size, nullptr);
    model::ForwardCtx ctx;
    double total = 0.0;
    for (std::size_t bi = 0; bi < batches.batches.size(); ++bi) {
        core::Tape tape;
        auto fwd = m.build_forward(tape, batches.batches[bi], ctx);
        auto loss = tape.cross_entropy_mean(m.classifier_logits(tape, fwd, ctx),
                                            batches.labels[bi]);
        total += tape.val(loss)[0] * static_cast<double>(batches.labels[bi].size());
    }
    return total / static_cast<double>(split.size());
}

RunRecord train(model::EncoderModel& m, const data::TaskDataset& dataset,
                const TuningPolicy& policy, const TrainConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    validate_config(cfg);
    if (dataset.train.empty()) throw std::runtime_error("train split is empty");
    if (dataset.dev.empty()) throw std::runtime_error("dev split is empty");
    if (dataset.test.empty()) throw std::runtime_error("test split is empty");
    apply_tuning_policy(m, policy, model::HeadKind::classifier);

    TrainConfig rc = cfg;
    rc.peak_lr = resolve_peak_lr(cfg, policy);
    auto batches_per_epoch =
        static_cast<std::int64_t>((dataset.train.size() + static_cast<std::size_t>(rc.batch_size) - 1) /
                                  static_cast<std::size_t>(rc.batch_size));
    std::int64_t total_steps =
        rc.max_steps > 0 ? rc.max_steps : batches_per_epoch * rc.epochs;

    Rng root(rc.seed);
    Rng shuffle_rng = root.fork("shuffle");
    Rng dropout_rng = root.fork("dropout");
    Rng mixout_rng = root.fork("mixout");

    auto& params = m.parameters();
    OptimizerState opt(params);

    model::ForwardCtx ctx;
    ctx.training = true;
    ctx.dropout = &dropout_rng;
    ctx.mixout = &mixout_rng;
    if (policy.mixout) {
        ctx.mixout_p = policy.mixout->probability;
        ctx.mixout_compensate = policy.mixout->compensate;
    }

    RunRecord rec;
    rec.seed = rc.seed;
    rec.metric = metric_name(rc.metric);
    rec.config_digest = run_digest("train", m, policy, rc,
                                   dataset.provenance + "|" + std::to_string(dataset.train.size()) +
                                       "/" + std::to_string(dataset.dev.size()) + "/" +
                                       std::to_string(dataset.test.size()));

    double best = -std::numeric_limits<double>::infinity();
    std::vector<Tensor> best_values;
    double loss_sum = 0.0;
    std::int64_t loss_n = 0;
    std::int64_t step = 0;
    int current_epoch = 0;
    bool done = false;

    auto do_eval = [&](int epoch) {
        MetricValue dev = evaluate(m, dataset.dev, rc.metric);
        if (!std::isfinite(dev.value)) throw std::runtime_error("dev metric is not finite");
        if (dev.degenerate)
            rec.warnings.push_back("dev metric degenerate (pinned to 0) at step " +
                                   std::to_string(step));
        double mean_loss = loss_n > 0 ? loss_sum / static_cast<double>(loss_n) : 0.0;
        loss_sum = 0.0;
        loss_n = 0;
        rec.evaluations.push_back({step, mean_loss, dev.value});
        if (dev.value > best) {
            best = dev.value;
            rec.selected_step = step;
            rec.selected_epoch = epoch;
            best_values.clear();
            best_values.reserve(params.size());
            for (const Parameter& p : params) best_values.push_back(p.value);
        }
    };

    for (int epoch = 1; !done && (rc.max_steps > 0 || epoch <= rc.epochs); ++epoch) {
        current_epoch = epoch;
        data::LabeledBatches batches = data::make_batches(dataset.train, rc.batch_size, &shuffle_rng);
        for (std::size_t bi = 0; bi < batches.batches.size() && !done; ++bi) {
            ++step;
            for (Parameter& p : params) p.grad.fill(0.0);
            core::Tape tape;
            auto fwd = m.build_forward(tape, batches.batches[bi], ctx);
            auto loss = tape.cross_entropy_mean(m.classifier_logits(tape, fwd, ctx),
                                                batches.labels[bi]);
            tape.backward(loss);
            adam_step(params, opt, lr_at(step, total_steps, rc));
            loss_sum += tape.val(loss)[0];
            ++loss_n;
            if (rc.eval_every > 0 && step % rc.eval_every == 0) do_eval(epoch);
            if (step >= total_steps) done = true;
        }
        if (rc.eval_every == 0) do_eval(epoch);
    }
    if (rec.evaluations.empty() || rec.evaluations.back().step != step) do_eval(current_epoch);

    if (!best_values.empty())
        for (std::size_t i = 0; i < params.size(); ++i) params[i].value = best_values[i];

    MetricValue test = evaluate(m, dataset.test, rc.metric);
    if (test.degenerate) rec.warnings.push_back("test metric degenerate (pinned to 0)");
    rec.final_metric = test.value;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

RunRecord tapt_pretrain(model::EncoderModel& m, const data::TokenizedCorpus& corpus,
                        const TuningPolicy& policy, const TrainConfig& cfg) {
    auto t0 = std::chrono::steady_clock::now();
    validate_config(cfg);
    if (corpus.vocab.size() != m.config().vocab_size)
        throw std::runtime_error("corpus vocabulary of " + std::to_string(corpus.vocab.size()) +
                                 " tokens does not match model vocab_size " +
                                 std::to_string(m.config().vocab_size));
    std::vector<std::vector<int>> encoded;
    encoded.reserve(corpus.sequences.size());
    for (const auto& seq : corpus.sequences)
        encoded.push_back(data::encode_sequence(seq, m.config().max_seq_len));
    if (static_cast<int>(encoded.size()) < cfg.batch_size)
        throw std::runtime_error("corpus of " + std::to_string(encoded.size()) +
                                 " sequences is shorter than one batch of " +
                                 std::to_string(cfg.batch_size));
    apply_tuning_policy(m, policy, model::HeadKind::mlm);

    TrainConfig rc = cfg;
    rc.peak_lr = resolve_peak_lr(cfg, policy);
    auto batches_per_epoch =
        static_cast<std::int64_t>((encoded.size() + static_cast<std::size_t>(rc.batch_size) - 1) /
                                  static_cast<std::size_t>(rc.batch_size));
    std::int64_t total_steps = rc.max_steps > 0 ? rc.max_steps : batches_per_epoch * rc.epochs;

    Rng root(rc.seed);
    Rng shuffle_rng = root.fork("shuffle");
    Rng dropout_rng = root.fork("dropout");
    Rng mixout_rng = root.fork("mixout");
    Rng masking_rng = root.fork("masking");
    Rng eval_mask_rng = root.fork("tapt.eval_mask");

    // Fixed masked snapshot for loss tracking, so the trace is comparable
    // across steps.
    std::size_t eval_n = std::min<std::size_t>(encoded.size(), kTaptEvalSequences);
    std::vector<std::vector<int>> eval_seqs(encoded.begin(),
                                            encoded.begin() + static_cast<std::ptrdiff_t>(eval_n));
    std::vector<data::MlmMasking> eval_masked;
    for (const auto& batch : data::make_sequence_batches(eval_seqs, rc.batch_size, nullptr))
        eval_masked.push_back(data::mask_for_mlm(batch, eval_mask_rng, m.config().vocab_size));

    auto eval_loss = [&]() {
        double total = 0.0;
        std::int64_t count = 0;
        model::ForwardCtx ectx; // eval mode
        for (const data::MlmMasking& em : eval_masked) {
            if (em.positions.empty()) continue;
            core::Tape tape;
            auto fwd = m.build_forward(tape, em.masked, ectx);
            auto loss = tape.cross_entropy_mean(m.mlm_logits(tape, fwd, em.positions, ectx),
                                                em.targets);
            total += tape.val(loss)[0] * static_cast<double>(em.positions.size());
            count += static_cast<std::int64_t>(em.positions.size());
        }
        if (count == 0)
            throw std::runtime_error("the evaluation snapshot has no masked positions");
        return total / static_cast<double>(count);
    };

    model::ForwardCtx ctx;
    ctx.training = true;
    ctx.dropout = &dropout_rng;
    ctx.mixout = &mixout_rng;
    if (policy.mixout) {
        ctx.mixout_p = policy.mixout->probability;
        ctx.mixout_compensate = policy.mixout->compensate;
    }

    auto& params = m.parameters();
    OptimizerState opt(params);

    RunRecord rec;
    rec.seed = rc.seed;
    rec.metric = "neg_mlm_loss";
    rec.config_digest = run_digest("tapt", m, policy, rc,
                                   std::to_string(encoded.size()) + " sequences");

    double best = -std::numeric_limits<double>::infinity();
    double loss_sum = 0.0;
    std::int64_t loss_n = 0;
    std::int64_t step = 0;
    std::int64_t skipped = 0;
    int current_epoch = 0;
    bool done = false;

    auto do_eval = [&](int epoch, double fallback_loss) {
        double el = eval_loss();
        double mean_loss = loss_n > 0 ? loss_sum / static_cast<double>(loss_n) : fallback_loss;
        loss_sum = 0.0;
        loss_n = 0;
        rec.evaluations.push_back({step, mean_loss, -el});
        if (-el > best) {
            best = -el;
            rec.selected_step = step;
            rec.selected_epoch = epoch;
        }
    };

    do_eval(0, 0.0);
    rec.evaluations.back().train_loss = -rec.evaluations.back().dev_metric;

    for (int epoch = 1; !done && (rc.max_steps > 0 || epoch <= rc.epochs); ++epoch) {
        current_epoch = epoch;
        std::int64_t steps_this_epoch = 0;
        for (const model::TokenBatch& batch :
             data::make_sequence_batches(encoded, rc.batch_size, &shuffle_rng)) {
            data::MlmMasking masked = data::mask_for_mlm(batch, masking_rng, m.config().vocab_size);
            if (masked.positions.empty()) {
                ++skipped;
                continue;
            }
            ++step;
            ++steps_this_epoch;
            for (Parameter& p : params) p.grad.fill(0.0);
            core::Tape tape;
            auto fwd = m.build_forward(tape, masked.masked, ctx);
            auto loss = tape.cross_entropy_mean(m.mlm_logits(tape, fwd, masked.positions, ctx),
                                                masked.targets);
            tape.backward(loss);
            adam_step(params, opt, lr_at(std::min(step, total_steps), total_steps, rc));
            loss_sum += tape.val(loss)[0];
            ++loss_n;
            if (rc.eval_every > 0 && step % rc.eval_every == 0) do_eval(epoch, 0.0);
            if (step >= total_steps) {
                done = true;
                break;
            }
        }
        if (steps_this_epoch == 0)
            throw std::runtime_error("masking selected no positions across an entire epoch");
        if (!done && rc.eval_every == 0) do_eval(epoch, 0.0);
    }
    if (rec.evaluations.back().step != step) do_eval(current_epoch, 0.0);

    if (skipped > 0)
        rec.warnings.push_back("skipped " + std::to_string(skipped) +
                               " batches with no masked positions");
    rec.final_metric = rec.evaluations.back().dev_metric;
    rec.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rec;
}

} // namespace adapterlab::tuning
