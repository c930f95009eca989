// Acceptance gate: eleven end-to-end guarantees the laboratory must keep,
// each reported as one pass/fail line with its runtime. Run without
// arguments to check all of them, or pass criterion numbers for a subset.
// The exit code is the number of failed criteria.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "adapterlab/analysis.hpp"
#include "adapterlab/autodiff.hpp"
#include "adapterlab/checkpoint.hpp"
#include "adapterlab/data.hpp"
#include "adapterlab/model.hpp"
#include "adapterlab/rng.hpp"
#include "adapterlab/run_io.hpp"
#include "adapterlab/tensor.hpp"
#include "adapterlab/tuning.hpp"

namespace {

using namespace adapterlab;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void require(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

template <class F>
bool throws(F&& f) {
    try {
        f();
    } catch (const std::exception&) {
        return true;
    }
    return false;
}

core::Tensor random_tensor(std::vector<int> shape, core::Rng& rng, double scale = 1.0) {
    core::Tensor t(std::move(shape));
    for (double& x : t.vec()) x = rng.uniform(-scale, scale);
    return t;
}

bool bits_equal(const core::Tensor& a, const core::Tensor& b) {
    return a.same_shape(b) && std::memcmp(a.vec().data(), b.vec().data(),
                                          a.vec().size() * sizeof(double)) == 0;
}

std::string read_binary(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    require(bool(in), "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Plain row-major matrix product for building rotated comparison points.
core::Tensor matmul_plain(const core::Tensor& a, const core::Tensor& b) {
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    core::Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int l = 0; l < k; ++l) s += a.at({i, l}) * b.at({l, j});
            out.at({i, j}) = s;
        }
    return out;
}

// Random orthogonal matrix via Gram-Schmidt on a random square matrix.
core::Tensor random_orthogonal(int n, core::Rng& rng) {
    core::Tensor q = random_tensor({n, n}, rng);
    for (int c = 0; c < n; ++c) {
        for (int prev = 0; prev < c; ++prev) {
            double dot = 0.0;
            for (int r = 0; r < n; ++r) dot += q.at({r, c}) * q.at({r, prev});
            for (int r = 0; r < n; ++r) q.at({r, c}) -= dot * q.at({r, prev});
        }
        double norm = 0.0;
        for (int r = 0; r < n; ++r) norm += q.at({r, c}) * q.at({r, c});
        norm = std::sqrt(norm);
        require(norm > 1e-8, "degenerate column during orthogonalization");
        for (int r = 0; r < n; ++r) q.at({r, c}) /= norm;
    }
    return q;
}

bool param_bits_match_snapshot(const core::Parameter& p, const analysis::ModelSnapshot& snap,
                               std::size_t index) {
    const analysis::SnapshotEntry& e = snap.entries[index];
    require(e.name == p.name, "snapshot entry order does not match the parameter table");
    return std::memcmp(p.value.vec().data(), snap.values.data() + e.offset,
                       static_cast<std::size_t>(e.length) * sizeof(double)) == 0;
}

// Keyword-classification task shared by several criteria below.
data::TaskDataset small_task(std::uint64_t seed) {
    data::SyntheticTaskSpec spec;
    spec.vocab_size = 48;
    spec.num_classes = 2;
    spec.keywords_per_class = 2;
    spec.keyword_rate = 0.4;
    spec.min_len = 4;
    spec.max_len = 8;
    spec.seed = seed;
    return data::generate_synthetic_task(spec, {96, 24, 24}, {}, 64);
}

model::TransformerConfig small_config(int vocab_size) {
    model::TransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.model_dim = 32;
    cfg.num_heads = 2;
    cfg.ffn_dim = 64;
    cfg.vocab_size = vocab_size;
    cfg.max_seq_len = 64;
    cfg.dropout_rate = 0.1;
    return cfg;
}

// ---------------------------------------------------------------------------
// 1. Analytic gradients vs central finite differences, h = 1e-5, every
//    differentiable operation plus both full-model losses, within 1e-4.
// ---------------------------------------------------------------------------
std::string criterion1() {
    Clock::time_point start = Clock::now();
    const double h = 1e-5;
    const double bound = 1e-4;
    double worst = 0.0;

    auto check = [&](const std::string& what, const std::function<core::Var(core::Tape&)>& build,
                     std::vector<core::Parameter*> ps) {
        double err = core::gradient_check(build, ps, h);
        worst = std::max(worst, err);
        require(err <= bound, what + ": gradient error " + num(err) + " exceeds " + num(bound));
    };

    core::Rng rng(11);
    {
        core::Parameter a("a", random_tensor({3, 4}, rng), core::ParamKind::linear_weight);
        core::Parameter b("b", random_tensor({3, 4}, rng), core::ParamKind::linear_weight);
        core::Tensor probe = random_tensor({4, 1}, rng);
        check("add", [&](core::Tape& t) {
            return t.sum_all(t.matmul(t.add(t.leaf(a), t.leaf(b)), t.constant(probe)));
        }, {&a, &b});
        check("scale", [&](core::Tape& t) {
            return t.sum_all(t.matmul(t.scale(t.leaf(a), -1.7), t.constant(probe)));
        }, {&a});
    }
    {
        core::Parameter a("a", random_tensor({3, 4}, rng), core::ParamKind::linear_weight);
        core::Parameter b("b", random_tensor({4, 2}, rng), core::ParamKind::linear_weight);
        core::Tensor probe = random_tensor({2, 1}, rng);
        check("matmul", [&](core::Tape& t) {
            return t.sum_all(t.matmul(t.matmul(t.leaf(a), t.leaf(b)), t.constant(probe)));
        }, {&a, &b});
    }
    {
        core::Parameter a("a", random_tensor({2, 3, 4}, rng), core::ParamKind::linear_weight);
        core::Parameter b("b", random_tensor({2, 4, 2}, rng), core::ParamKind::linear_weight);
        core::Parameter bt("bt", random_tensor({2, 2, 4}, rng), core::ParamKind::linear_weight);
        check("batched matmul", [&](core::Tape& t) {
            return t.sum_all(t.bmm(t.leaf(a), t.leaf(b)));
        }, {&a, &b});
        check("batched matmul, transposed", [&](core::Tape& t) {
            return t.sum_all(t.bmm(t.leaf(a), t.leaf(bt), true));
        }, {&a, &bt});
    }
    {
        core::Parameter x("x", random_tensor({2, 3, 4}, rng), core::ParamKind::linear_weight);
        core::Parameter w("w", random_tensor({4, 5}, rng), core::ParamKind::linear_weight);
        core::Parameter b("b", random_tensor({5}, rng), core::ParamKind::bias);
        core::Tensor probe = random_tensor({5, 1}, rng);
        check("linear", [&](core::Tape& t) {
            core::Var y = t.linear(t.leaf(x), t.leaf(w), t.leaf(b));
            return t.sum_all(t.matmul(t.reshape(y, {6, 5}), t.constant(probe)));
        }, {&x, &w, &b});
    }
    {
        core::Parameter x("x", random_tensor({3, 5}, rng), core::ParamKind::linear_weight);
        core::Tensor probe = random_tensor({5, 1}, rng);
        check("tanh", [&](core::Tape& t) {
            return t.sum_all(t.matmul(t.tanh(t.leaf(x)), t.constant(probe)));
        }, {&x});
        check("gelu", [&](core::Tape& t) {
            return t.sum_all(t.matmul(t.gelu(t.leaf(x)), t.constant(probe)));
        }, {&x});
        check("softmax over rows", [&](core::Tape& t) {
            return t.sum_all(t.matmul(t.softmax_rows(t.leaf(x)), t.constant(probe)));
        }, {&x});
    }
    {
        core::Parameter x("x", random_tensor({3, 8}, rng), core::ParamKind::linear_weight);
        core::Parameter gain("gain", random_tensor({8}, rng), core::ParamKind::norm_gain);
        core::Parameter bias("bias", random_tensor({8}, rng), core::ParamKind::bias);
        core::Tensor probe = random_tensor({8, 1}, rng);
        check("layer norm", [&](core::Tape& t) {
            core::Var y = t.layer_norm(t.leaf(x), t.leaf(gain), t.leaf(bias), 1e-5);
            return t.sum_all(t.matmul(y, t.constant(probe)));
        }, {&x, &gain, &bias});
    }
    {
        core::Parameter table("table", random_tensor({10, 4}, rng), core::ParamKind::embedding);
        core::Tensor probe = random_tensor({4, 1}, rng);
        std::vector<int> ids{1, 3, 3, 7};
        check("embedding gather", [&](core::Tape& t) {
            return t.sum_all(t.matmul(t.embedding_rows(t.leaf(table), ids), t.constant(probe)));
        }, {&table});
    }
    {
        core::Parameter x("x", random_tensor({4, 6}, rng), core::ParamKind::linear_weight);
        core::Tensor probe = random_tensor({6, 1}, rng);
        check("dropout", [&](core::Tape& t) {
            core::Rng mask_rng(77); // same mask on every evaluation
            core::Var y = t.dropout(t.leaf(x), 0.3, mask_rng);
            return t.sum_all(t.matmul(y, t.constant(probe)));
        }, {&x});
    }
    {
        core::Parameter x("x", random_tensor({2, 3, 4}, rng), core::ParamKind::linear_weight);
        core::Tensor probe = random_tensor({8, 1}, rng);
        check("permute and reshape", [&](core::Tape& t) {
            core::Var y = t.reshape(t.permute(t.leaf(x), {1, 0, 2}), {3, 8});
            return t.sum_all(t.matmul(y, t.constant(probe)));
        }, {&x});
    }
    {
        core::Parameter x("x", random_tensor({5, 4}, rng), core::ParamKind::linear_weight);
        core::Tensor probe = random_tensor({4, 1}, rng);
        std::vector<int> rows{0, 2, 2, 4};
        check("row selection", [&](core::Tape& t) {
            return t.sum_all(t.matmul(t.select_rows(t.leaf(x), rows), t.constant(probe)));
        }, {&x});
    }
    {
        core::Parameter logits("logits", random_tensor({4, 3}, rng), core::ParamKind::linear_weight);
        std::vector<int> labels{0, 2, 1, 1};
        check("cross entropy", [&](core::Tape& t) {
            return t.cross_entropy_mean(t.leaf(logits), labels);
        }, {&logits});
    }
    {
        core::Parameter x("x", random_tensor({3, 4}, rng), core::ParamKind::linear_weight);
        check("sum", [&](core::Tape& t) { return t.sum_all(t.leaf(x)); }, {&x});
    }
    {
        core::Parameter w("w", random_tensor({4, 3}, rng), core::ParamKind::linear_weight);
        w.initial = random_tensor({4, 3}, rng);
        core::MixoutMask mask{{1, 0, 1, 0}, 0.5, true};
        core::Tensor probe = random_tensor({3, 1}, rng);
        check("mixout rows", [&](core::Tape& t) {
            return t.sum_all(t.matmul(t.mixout_rows(w, mask), t.constant(probe)));
        }, {&w});
    }

    // Both losses through the full encoder: two layers, width 32, two heads,
    // adapters grafted, one padded row in the batch.
    model::TransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.model_dim = 32;
    cfg.num_heads = 2;
    cfg.ffn_dim = 64;
    cfg.vocab_size = 40;
    cfg.max_seq_len = 8;
    cfg.dropout_rate = 0.0;
    model::AdapterConfig adapter;
    adapter.hidden_size = 4;
    model::EncoderModel m(cfg, adapter, 3, 1);
    // Nudge the zero-start up-projections so every adapter weight carries a
    // live gradient through the checks.
    for (core::Parameter& p : m.parameters())
        if (p.name.find("adapter") != std::string::npos && p.name.find(".up.") != std::string::npos)
            for (double& x : p.value.vec()) x += rng.uniform(-0.05, 0.05);

    model::TokenBatch batch;
    batch.batch = 2;
    batch.seq = 6;
    batch.ids = {1, 9, 17, 25, 33, 2, 1, 12, 5, 2, 0, 0};
    model::ForwardCtx ctx; // evaluation mode: deterministic forward
    std::vector<core::Parameter*> ps;
    for (core::Parameter& p : m.parameters()) ps.push_back(&p);

    std::vector<int> labels{0, 2};
    check("classification loss through the full encoder", [&](core::Tape& t) {
        model::EncoderModel::Forward fwd = m.build_forward(t, batch, ctx);
        return t.cross_entropy_mean(m.classifier_logits(t, fwd, ctx), labels);
    }, ps);

    std::vector<int> rows{1, 3, 7, 9};
    std::vector<int> targets{9, 25, 12, 2};
    check("masked-token loss through the full encoder", [&](core::Tape& t) {
        model::EncoderModel::Forward fwd = m.build_forward(t, batch, ctx);
        return t.cross_entropy_mean(m.mlm_logits(t, fwd, rows, ctx), targets);
    }, ps);

    double secs = seconds_since(start);
    require(secs < 120.0, "took " + num(secs) + "s, budget is 120s");
    return "worst relative gradient error " + num(worst);
}

// ---------------------------------------------------------------------------
// 2. A freshly inserted adapter is the exact identity map: zero
//    up-projection, tiny but live down-projection, and grafting adapters
//    into a model changes no activation bit.
// ---------------------------------------------------------------------------
std::string criterion2() {
    model::TransformerConfig cfg = small_config(30);
    cfg.max_seq_len = 8;
    model::AdapterConfig adapter;
    adapter.hidden_size = 8;

    model::EncoderModel fresh(cfg, adapter, 2, 4);
    int up_params = 0, down_weights = 0;
    for (const core::Parameter& p : fresh.parameters()) {
        if (p.name.find("adapter") == std::string::npos) continue;
        if (p.name.find(".up.") != std::string::npos) {
            ++up_params;
            for (double x : p.value.vec())
                require(x == 0.0, p.name + " must start exactly zero");
        } else if (p.name.find(".down.weight") != std::string::npos) {
            ++down_weights;
            double max_abs = 0.0;
            for (double x : p.value.vec()) max_abs = std::max(max_abs, std::abs(x));
            require(max_abs > 0.0, p.name + " must start live, found all zeros");
            require(max_abs < 0.01, p.name + " starts too large: max |w| = " + num(max_abs));
        }
    }
    require(up_params == cfg.num_layers * 2 * 2, "unexpected number of up-projection tensors");
    require(down_weights == cfg.num_layers * 2, "unexpected number of down-projection weights");

    model::EncoderModel base(cfg, std::nullopt, 2, 4);
    model::EncoderModel grafted = base.with_adapters(adapter);
    model::TokenBatch batch;
    batch.batch = 2;
    batch.seq = 5;
    batch.ids = {1, 7, 21, 9, 2, 1, 14, 2, 0, 0};
    model::EncoderOutputs ob = base.forward_values(batch);
    model::EncoderOutputs og = grafted.forward_values(batch);
    require(ob.hidden.size() == og.hidden.size(), "grafting changed the number of layers");
    for (std::size_t l = 0; l < ob.hidden.size(); ++l)
        require(bits_equal(ob.hidden[l], og.hidden[l]),
                "hidden states differ at level " + std::to_string(l) + " after grafting");
    require(bits_equal(ob.pooled, og.pooled), "pooled outputs differ after grafting");

    // The map itself, applied directly: up at zero returns the input bits.
    core::Rng rng(3);
    core::Tensor h = random_tensor({4, 6}, rng);
    model::AdapterLayer layer;
    layer.down_w = random_tensor({6, 2}, rng, 0.001);
    layer.down_b = random_tensor({2}, rng, 0.001);
    layer.up_w = core::Tensor({2, 6});
    layer.up_b = core::Tensor({6});
    require(bits_equal(model::adapter_forward(h, layer), h),
            "zero up-projection did not reproduce the input exactly");
    return "";
}

// ---------------------------------------------------------------------------
// 3. 500 adapter-tuning steps leave every backbone weight byte-identical;
//    the trainable set is exactly adapters, layer norms, and the live head.
// ---------------------------------------------------------------------------
std::string criterion3() {
    data::TaskDataset ds = small_task(21);
    model::AdapterConfig adapter;
    adapter.hidden_size = 8;
    model::EncoderModel m(small_config(static_cast<int>(ds.vocab.size())), adapter,
                          ds.num_classes(), 2);
    analysis::ModelSnapshot before = analysis::snapshot_parameters(m);

    tuning::TrainConfig tc;
    tc.epochs = 100;
    tc.batch_size = 16;
    tc.peak_lr = 3e-3;
    tc.seed = 2;
    tc.eval_every = 100;
    tc.max_steps = 500;
    tuning::RunRecord rec = tuning::train(m, ds, tuning::TuningPolicy::adapter_tuning(adapter), tc);
    require(rec.evaluations.back().step == 500, "run did not reach step 500");

    const std::vector<core::Parameter>& params = m.parameters();
    bool any_moved = false;
    for (std::size_t i = 0; i < params.size(); ++i) {
        model::ParamRole role = m.role(i);
        bool should_train = role == model::ParamRole::adapter ||
                            role == model::ParamRole::layer_norm ||
                            role == model::ParamRole::head_classifier;
        require(params[i].frozen == !should_train,
                params[i].name + ": trainable set differs from adapters + norms + live head");
        bool same = param_bits_match_snapshot(params[i], before, i);
        if (params[i].frozen)
            require(same, params[i].name + " changed despite being frozen");
        else if (!same)
            any_moved = true;
    }
    require(any_moved, "no trainable parameter moved in 500 steps");
    return "";
}

// ---------------------------------------------------------------------------
// 4. Adapter parameter accounting at the reference geometry (12 layers,
//    width 768) against a 110M-parameter encoder.
// ---------------------------------------------------------------------------
std::string criterion4() {
    model::TransformerConfig cfg;
    cfg.num_layers = 12;
    cfg.model_dim = 768;
    cfg.num_heads = 12;
    cfg.ffn_dim = 3072;
    cfg.vocab_size = 30522;
    cfg.max_seq_len = 512;

    auto adapters_of = [&](int m) {
        model::AdapterConfig a;
        a.hidden_size = m;
        return model::count_parameters(cfg, a, 2, model::CountFilter::adapters).count;
    };
    const double reference = 110e6;
    auto pct = [&](std::int64_t c) { return std::round(1000.0 * c / reference) / 10.0; };

    std::int64_t c64 = adapters_of(64);
    require(c64 == 2379264, "size-64 adapters count " + std::to_string(c64) + ", want 2379264");
    require(std::abs(pct(c64) - 2.2) < 1e-9,
            "size-64 share rounds to " + num(pct(c64)) + "%, want 2.2%");

    std::int64_t c128 = adapters_of(128);
    require(c128 == 4740096, "size-128 adapters count " + std::to_string(c128) + ", want 4740096");
    require(std::abs(pct(c128) - 4.3) < 1e-9,
            "size-128 share rounds to " + num(pct(c128)) + "%, want 4.3%");

    std::int64_t c256 = adapters_of(256);
    require(c256 == 9461760, "size-256 adapters count " + std::to_string(c256) + ", want 9461760");
    return "size 256 adds " + std::to_string(c256) + " parameters (" + num(pct(c256)) +
           "% of the reference encoder)";
}

// ---------------------------------------------------------------------------
// 5. Representation similarity: 1 on itself, 1 under rotation, bit-exact
//    under coordinate sign flips, and -1 on the constructed counterexample.
// ---------------------------------------------------------------------------
std::string criterion5() {
    core::Rng rng(11);
    core::Tensor a = random_tensor({64, 16}, rng);

    double self = analysis::rsa_score(a, a);
    require(std::abs(self - 1.0) <= 1e-9, "self-similarity " + num(self) + ", want 1 within 1e-9");

    core::Tensor rotated = matmul_plain(a, random_orthogonal(16, rng));
    double rot = analysis::rsa_score(a, rotated);
    require(std::abs(rot - 1.0) <= 1e-6,
            "rotated similarity " + num(rot) + ", want 1 within 1e-6");

    core::Tensor flipped = a;
    for (int r = 0; r < 64; ++r)
        for (int c = 0; c < 16; ++c)
            if (c % 2 == 1) flipped.at({r, c}) = -flipped.at({r, c});
    double flip = analysis::rsa_score(a, flipped);
    require(flip == self, "sign flips changed the score: " + num(flip) + " vs " + num(self));

    // Three unit vectors whose pairwise cosines decrease exactly as the
    // other set's increase: correlation -1.
    core::Tensor u({3, 2}, {1.0, 0.0, 0.5, 0.8660254037844386, 0.0, 1.0});
    core::Tensor v({3, 3}, {1.0, 0.0, 0.0,
                            0.4, 0.91651513899116799, 0.0,
                            0.8, -0.23220600945207276, 0.5532453065090962});
    double anti = analysis::rsa_score(u, v);
    require(std::abs(anti + 1.0) <= 1e-9,
            "constructed opposite-order score " + num(anti) + ", want -1 within 1e-9");
    return "";
}

// ---------------------------------------------------------------------------
// 6. On a learnable task, adapter tuning stays within 5 accuracy points of
//    full fine-tuning while its upper layers stay measurably closer to where
//    they started (mean over seeds 1-3).
// ---------------------------------------------------------------------------
std::string criterion6() {
    Clock::time_point start = Clock::now();

    data::SyntheticTaskSpec spec;
    spec.vocab_size = 128;
    spec.num_classes = 2;
    spec.keywords_per_class = 4;
    spec.keyword_rate = 0.25;
    spec.min_len = 6;
    spec.max_len = 12;
    spec.label_noise = 0.05;
    spec.seed = 7;
    data::RawSplits raw = data::generate_synthetic_raw(spec, {1000, 200, 200});
    data::TaskDataset ds = data::encode_raw(raw, {}, 128, "synthetic");

    std::vector<std::string> lines;
    lines.reserve(raw.train.size());
    for (const data::RawExample& ex : raw.train) lines.push_back(ex.text);
    data::TokenizedCorpus corpus = data::tokenize_corpus(lines, {});
    require(corpus.vocab.tokens == ds.vocab.tokens,
            "corpus and task vocabularies diverged; shared encoding is broken");

    // One shared backbone, adapted to the task text before any tuning: both
    // branches start from the same competent starting point.
    model::TransformerConfig cfg;
    cfg.num_layers = 4;
    cfg.model_dim = 64;
    cfg.num_heads = 4;
    cfg.ffn_dim = 256;
    cfg.vocab_size = static_cast<int>(corpus.vocab.size());
    cfg.max_seq_len = 128;
    cfg.dropout_rate = 0.1;
    model::EncoderModel pretrained(cfg, std::nullopt, ds.num_classes(), 11);
    tuning::TrainConfig pre;
    pre.batch_size = 16;
    pre.peak_lr = 1e-3;
    pre.seed = 11;
    pre.max_steps = 400;
    tuning::tapt_pretrain(pretrained, corpus, tuning::TuningPolicy::full_finetune(), pre);

    model::AdapterConfig adapter;
    adapter.hidden_size = 8;
    analysis::RSAConfig rsa_cfg; // 512 anchors, seed 0
    std::vector<analysis::TokenRef> refs = analysis::sample_token_refs(ds.dev, rsa_cfg);

    // Mean similarity-to-start over the upper half of the encoder (layers 3
    // and 4 of 4), comparing the tuned model with its own starting state.
    auto upper_similarity = [&](model::EncoderModel& init_state, model::EncoderModel& tuned) {
        analysis::RepresentationSet ri =
            analysis::collect_representations(init_state, ds.dev, refs, "start");
        analysis::RepresentationSet rt =
            analysis::collect_representations(tuned, ds.dev, refs, "tuned");
        std::vector<double> scores = analysis::rsa_layer_scores(ri, rt);
        require(scores.size() == 5, "expected one score per representation level");
        return (scores[3] + scores[4]) / 2.0;
    };

    double acc_adapter = 0.0, acc_full = 0.0, sim_adapter = 0.0, sim_full = 0.0;
    for (std::uint64_t seed : {1, 2, 3}) {
        tuning::TrainConfig tc;
        tc.epochs = 6;
        tc.batch_size = 16;
        tc.seed = seed;

        model::EncoderModel ma = pretrained.with_adapters(adapter);
        ma.rebase_initials();
        model::EncoderModel ma_start = ma.clone();
        tc.peak_lr = 3e-3;
        tuning::RunRecord ra = tuning::train(ma, ds, tuning::TuningPolicy::adapter_tuning(adapter), tc);
        acc_adapter += ra.final_metric;
        sim_adapter += upper_similarity(ma_start, ma);

        model::EncoderModel mf = pretrained.clone();
        mf.rebase_initials();
        model::EncoderModel mf_start = mf.clone();
        tc.peak_lr = 1e-3;
        tuning::RunRecord rf = tuning::train(mf, ds, tuning::TuningPolicy::full_finetune(), tc);
        acc_full += rf.final_metric;
        sim_full += upper_similarity(mf_start, mf);
    }
    acc_adapter /= 3.0;
    acc_full /= 3.0;
    sim_adapter /= 3.0;
    sim_full /= 3.0;

    require(std::abs(acc_adapter - acc_full) <= 0.05,
            "accuracy gap " + num(std::abs(acc_adapter - acc_full)) + " exceeds 0.05 (adapter " +
                num(acc_adapter) + ", full " + num(acc_full) + ")");
    require(sim_adapter > sim_full,
            "upper layers drifted at least as much under adapters (" + num(sim_adapter) +
                ") as under full tuning (" + num(sim_full) + ")");
    double secs = seconds_since(start);
    require(secs < 600.0, "took " + num(secs) + "s, budget is 600s");
    return "test accuracy " + num(acc_adapter) + " vs " + num(acc_full) +
           "; upper-layer similarity to start " + num(sim_adapter) + " vs " + num(sim_full);
}

// ---------------------------------------------------------------------------
// 7. The loss landscape's interpolation endpoints reproduce direct
//    evaluation within 1e-8 relative, on the default 21-point grid.
// ---------------------------------------------------------------------------
std::string criterion7() {
    data::TaskDataset ds = small_task(23);
    model::EncoderModel m(small_config(static_cast<int>(ds.vocab.size())), std::nullopt,
                          ds.num_classes(), 5);
    analysis::ModelSnapshot theta0 = analysis::snapshot_parameters(m);
    core::Rng noise(9);
    for (core::Parameter& p : m.parameters())
        for (double& x : p.value.vec()) x += 0.02 * noise.normal();
    analysis::ModelSnapshot theta1 = analysis::snapshot_parameters(m);

    std::vector<double> grid = analysis::default_alpha_grid();
    require(grid.size() == 21, "default grid has " + std::to_string(grid.size()) + " points");
    for (int i = 0; i < 21; ++i)
        require(grid[static_cast<std::size_t>(i)] == (i - 10) / 5.0,
                "grid point " + std::to_string(i) + " is " + num(grid[i]));

    std::vector<analysis::LandscapePoint> pts =
        analysis::loss_landscape(m, theta0, theta1, ds.dev, grid, 32);
    require(pts.size() == 21, "landscape returned " + std::to_string(pts.size()) + " points");
    for (const analysis::LandscapePoint& p : pts)
        require(std::isfinite(p.loss) && p.loss > 0.0, "non-finite or non-positive loss on the line");

    analysis::restore_parameters(m, theta0);
    double at0 = tuning::dataset_loss(m, ds.dev, 32);
    analysis::restore_parameters(m, theta1);
    double at1 = tuning::dataset_loss(m, ds.dev, 32);
    double e0 = std::abs(pts[10].loss - at0) / std::abs(at0);
    double e1 = std::abs(pts[15].loss - at1) / std::abs(at1);
    require(pts[10].alpha == 0.0 && pts[15].alpha == 1.0, "endpoint alphas moved");
    require(e0 <= 1e-8, "alpha=0 endpoint off by " + num(e0) + " relative");
    require(e1 <= 1e-8, "alpha=1 endpoint off by " + num(e1) + " relative");
    return "";
}

// ---------------------------------------------------------------------------
// 8. Mixout: probability 0 is the identity, w == w0 is a bit-exact fixed
//    point under every mask, probabilities >= 1 are rejected, and a 0.9 run
//    completes with finite weights.
// ---------------------------------------------------------------------------
std::string criterion8() {
    core::Rng rng(13);
    core::Tensor w = random_tensor({3, 4}, rng);
    core::Tensor w0 = random_tensor({3, 4}, rng);

    core::Tensor at_zero =
        tuning::mixout_effective_weight(w, w0, 0.0, std::vector<std::uint8_t>(4, 0), true);
    require(bits_equal(at_zero, w), "probability 0 must return the weights unchanged");
    {
        core::Parameter pw("w", w, core::ParamKind::linear_weight);
        pw.initial = w0;
        core::Tape tape;
        core::MixoutMask mask{std::vector<std::uint8_t>(3, 1), 0.0, true};
        require(bits_equal(tape.val(tape.mixout_rows(pw, mask)), w),
                "probability 0 must be the identity on the tape as well");
    }

    for (int bits = 0; bits < 16; ++bits) {
        std::vector<std::uint8_t> replaced(4);
        for (int c = 0; c < 4; ++c) replaced[static_cast<std::size_t>(c)] = (bits >> c) & 1;
        for (double p : {0.5, 0.9})
            for (bool compensate : {true, false}) {
                core::Tensor eff = tuning::mixout_effective_weight(w0, w0, p, replaced, compensate);
                require(bits_equal(eff, w0),
                        "w == w0 must be a fixed point for every mask (mask bits " +
                            std::to_string(bits) + ", p " + num(p) + ")");
            }
    }

    require(throws([&] {
                tuning::mixout_effective_weight(w, w0, 1.0, std::vector<std::uint8_t>(4, 0), true);
            }),
            "probability 1 must be rejected");
    require(throws([&] {
                tuning::mixout_effective_weight(w, w0, 1.5, std::vector<std::uint8_t>(4, 0), true);
            }),
            "probability 1.5 must be rejected");
    {
        data::TaskDataset ds = small_task(25);
        model::EncoderModel m(small_config(static_cast<int>(ds.vocab.size())), std::nullopt,
                              ds.num_classes(), 6);
        require(throws([&] {
                    tuning::apply_tuning_policy(
                        m, tuning::TuningPolicy::full_finetune(tuning::MixoutConfig{1.0, true}),
                        model::HeadKind::classifier);
                }),
                "a tuning policy with probability 1 must be rejected");

        tuning::TrainConfig tc;
        tc.epochs = 1;
        tc.batch_size = 16;
        tc.seed = 6;
        tuning::RunRecord rec = tuning::train(
            m, ds, tuning::TuningPolicy::full_finetune(tuning::MixoutConfig{0.9, true}), tc);
        require(!rec.evaluations.empty(), "mixout run produced no evaluations");
        require(std::isfinite(rec.final_metric), "mixout run ended with a non-finite metric");
        for (const core::Parameter& p : m.parameters())
            for (double x : p.value.vec())
                require(std::isfinite(x), p.name + " went non-finite under mixout 0.9");
    }
    return "";
}

// ---------------------------------------------------------------------------
// 9. Adapter-only masked-token pretraining: 200 steps on a compressible
//    corpus cut the evaluation loss by at least 20% relative while the
//    backbone stays bit-identical.
// ---------------------------------------------------------------------------
std::string criterion9() {
    Clock::time_point start = Clock::now();

    // Each line repeats one of four tokens, so next-token structure is
    // trivially learnable even through frozen backbone weights.
    std::vector<std::string> lines;
    core::Rng gen(3);
    for (int i = 0; i < 400; ++i) {
        std::string token = "tok" + std::to_string(gen.uniform_int(4));
        int len = 8 + static_cast<int>(gen.uniform_int(5));
        std::string line = token;
        for (int j = 1; j < len; ++j) {
            line += ' ';
            line += token;
        }
        lines.push_back(std::move(line));
    }
    data::TokenizedCorpus corpus = data::tokenize_corpus(lines, {});
    require(corpus.vocab.size() == 9, "corpus vocabulary should be 5 reserved + 4 tokens");

    model::TransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.model_dim = 32;
    cfg.num_heads = 2;
    cfg.ffn_dim = 128;
    cfg.vocab_size = static_cast<int>(corpus.vocab.size());
    cfg.max_seq_len = 128;
    cfg.dropout_rate = 0.1;
    model::AdapterConfig adapter;
    adapter.hidden_size = 8;
    model::EncoderModel m(cfg, adapter, 2, 5);
    analysis::ModelSnapshot before = analysis::snapshot_parameters(m);

    tuning::TrainConfig tc;
    tc.batch_size = 32;
    tc.peak_lr = 5e-3;
    tc.seed = 5;
    tc.max_steps = 200;
    tuning::RunRecord rec =
        tuning::tapt_pretrain(m, corpus, tuning::TuningPolicy::adapter_tuning(adapter), tc);

    double loss0 = -rec.evaluations.front().dev_metric;
    double loss1 = -rec.evaluations.back().dev_metric;
    double drop = (loss0 - loss1) / loss0;
    require(drop >= 0.20, "masked-token loss fell only " + num(100.0 * drop) + "% (from " +
                              num(loss0) + " to " + num(loss1) + "), want at least 20%");

    const std::vector<core::Parameter>& params = m.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        model::ParamRole role = m.role(i);
        bool should_train = role == model::ParamRole::adapter ||
                            role == model::ParamRole::layer_norm ||
                            role == model::ParamRole::head_mlm;
        require(params[i].frozen == !should_train,
                params[i].name + ": trainable set differs from adapters + norms + live head");
        if (params[i].frozen)
            require(param_bits_match_snapshot(params[i], before, i),
                    params[i].name + " changed despite being frozen");
    }

    double secs = seconds_since(start);
    require(secs < 180.0, "took " + num(secs) + "s, budget is 180s");
    return "masked-token loss " + num(loss0) + " -> " + num(loss1) + " (" + num(100.0 * drop) +
           "% drop)";
}

// ---------------------------------------------------------------------------
// 10. Across the default learning-rate grid and five seeds, adapter tuning
//     is at least as stable (pooled interquartile range of the test metric)
//     as full fine-tuning; any failed cell scores exactly 0.
// ---------------------------------------------------------------------------
std::string criterion10() {
    Clock::time_point start = Clock::now();

    data::SyntheticTaskSpec spec;
    spec.vocab_size = 128;
    spec.num_classes = 2;
    spec.keywords_per_class = 4;
    spec.keyword_rate = 0.25;
    spec.min_len = 6;
    spec.max_len = 12;
    spec.label_noise = 0.05;
    spec.seed = 7;
    data::RawSplits raw = data::generate_synthetic_raw(spec, {1000, 200, 200});
    data::TaskDataset ds = data::encode_raw(raw, {}, 128, "synthetic");
    std::vector<std::string> lines;
    for (const data::RawExample& ex : raw.train) lines.push_back(ex.text);
    data::TokenizedCorpus corpus = data::tokenize_corpus(lines, {});

    model::TransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.model_dim = 32;
    cfg.num_heads = 2;
    cfg.ffn_dim = 128;
    cfg.vocab_size = static_cast<int>(corpus.vocab.size());
    cfg.max_seq_len = 128;
    cfg.dropout_rate = 0.1;
    model::EncoderModel pretrained(cfg, std::nullopt, ds.num_classes(), 11);
    tuning::TrainConfig pre;
    pre.batch_size = 16;
    pre.peak_lr = 1e-3;
    pre.seed = 11;
    pre.max_steps = 400;
    tuning::tapt_pretrain(pretrained, corpus, tuning::TuningPolicy::full_finetune(), pre);

    model::AdapterConfig adapter;
    adapter.hidden_size = 8;
    model::EncoderModel base_adapter = pretrained.with_adapters(adapter);
    base_adapter.rebase_initials();
    model::EncoderModel base_full = pretrained.clone();
    base_full.rebase_initials();

    std::vector<double> lrs = analysis::default_sweep_lrs();
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    tuning::TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 16;

    analysis::SweepResult sweep_adapter = analysis::lr_sweep(
        base_adapter, ds, tuning::TuningPolicy::adapter_tuning(adapter), lrs, seeds, tc);
    analysis::SweepResult sweep_full =
        analysis::lr_sweep(base_full, ds, tuning::TuningPolicy::full_finetune(), lrs, seeds, tc);

    auto pooled = [&](const analysis::SweepResult& r, const char* which) {
        require(r.cells.size() == 25, std::string(which) + ": expected 25 cells, got " +
                                          std::to_string(r.cells.size()));
        std::vector<double> metrics;
        for (const analysis::SweepCell& c : r.cells) {
            if (c.failed)
                require(c.metric == 0.0, std::string(which) + ": failed cell at lr " +
                                             num(c.lr) + " scored " + num(c.metric) +
                                             " instead of 0");
            metrics.push_back(c.metric);
        }
        return analysis::quartiles(metrics);
    };
    analysis::Quartiles qa = pooled(sweep_adapter, "adapter sweep");
    analysis::Quartiles qf = pooled(sweep_full, "full-tuning sweep");
    require(qa.iqr() <= qf.iqr(),
            "adapter tuning spread " + num(qa.iqr()) + " exceeds full tuning's " + num(qf.iqr()));

    double secs = seconds_since(start);
    require(secs < 1200.0, "took " + num(secs) + "s, budget is 1200s");
    return "pooled interquartile range " + num(qa.iqr()) + " (adapter) vs " + num(qf.iqr()) +
           " (full tuning)";
}

// ---------------------------------------------------------------------------
// 11. The same configuration and seed replay to an identical run record,
//     and checkpoints round-trip bit for bit.
// ---------------------------------------------------------------------------
std::string criterion11() {
    data::TaskDataset ds = small_task(31);
    model::TransformerConfig cfg = small_config(static_cast<int>(ds.vocab.size()));

    tuning::TrainConfig tc;
    tc.epochs = 2;
    tc.batch_size = 16;
    tc.peak_lr = 1e-3;
    tc.seed = 9;
    model::EncoderModel m1(cfg, std::nullopt, ds.num_classes(), 7);
    model::EncoderModel m2(cfg, std::nullopt, ds.num_classes(), 7);
    tuning::RunRecord r1 = tuning::train(m1, ds, tuning::TuningPolicy::full_finetune(), tc);
    tuning::RunRecord r2 = tuning::train(m2, ds, tuning::TuningPolicy::full_finetune(), tc);
    require(r1.same_results(r2), "identical configuration and seed produced different results");
    require(cli::record_to_json(r1).dump(2) == cli::record_to_json(r2).dump(2),
            "serialized run records differ between identical runs");
    const std::vector<core::Parameter>& p1 = m1.parameters();
    const std::vector<core::Parameter>& p2 = m2.parameters();
    for (std::size_t i = 0; i < p1.size(); ++i)
        require(bits_equal(p1[i].value, p2[i].value),
                p1[i].name + " differs between identical runs");

    fs::path dir =
        fs::temp_directory_path() / ("adapterlab_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    std::string ck1 = (dir / "ck").string();
    std::string ck2 = (dir / "ck_again").string();
    checkpoint::save_checkpoint(ck1, m1, ds.vocab, ds.label_names,
                                {"finetune", r1.selected_step});
    checkpoint::LoadedCheckpoint loaded = checkpoint::load_checkpoint(ck1);
    require(loaded.meta.policy == "finetune" && loaded.meta.step == r1.selected_step,
            "checkpoint metadata did not survive the round trip");
    require(loaded.vocab.tokens == ds.vocab.tokens, "vocabulary did not survive the round trip");
    require(loaded.label_names == ds.label_names, "label names did not survive the round trip");
    const std::vector<core::Parameter>& pl = loaded.model.parameters();
    require(pl.size() == p1.size(), "parameter count changed in the round trip");
    for (std::size_t i = 0; i < p1.size(); ++i) {
        require(pl[i].name == p1[i].name, "parameter order changed in the round trip");
        require(bits_equal(pl[i].value, p1[i].value), pl[i].name + ": values changed");
        require(bits_equal(pl[i].initial, p1[i].initial), pl[i].name + ": initials changed");
        require(pl[i].frozen == p1[i].frozen, pl[i].name + ": frozen flag changed");
    }
    checkpoint::save_checkpoint(ck2, loaded.model, loaded.vocab, loaded.label_names, loaded.meta);
    require(read_binary(dir / "ck/params.bin") == read_binary(dir / "ck_again/params.bin"),
            "re-saved parameter blob is not byte-identical");
    require(read_binary(dir / "ck/manifest.json") == read_binary(dir / "ck_again/manifest.json"),
            "re-saved manifest is not byte-identical");
    fs::remove_all(dir);
    return "";
}

struct Criterion {
    int id;
    const char* what;
    std::string (*fn)();
};

const Criterion kCriteria[] = {
    {1, "analytic gradients match central finite differences", criterion1},
    {2, "fresh adapters are the exact identity", criterion2},
    {3, "adapter tuning leaves the backbone byte-identical", criterion3},
    {4, "adapter parameter shares match the reference geometry", criterion4},
    {5, "representation similarity keeps its invariances", criterion5},
    {6, "adapters match full tuning on accuracy with less upper-layer drift", criterion6},
    {7, "loss landscape endpoints reproduce direct evaluation", criterion7},
    {8, "mixout is identity at 0, anchored at w0, rejected at 1", criterion8},
    {9, "adapter-only pretraining cuts masked-token loss with a frozen backbone", criterion9},
    {10, "adapter tuning is at least as stable across learning rates", criterion10},
    {11, "runs replay identically and checkpoints round-trip bitwise", criterion11},
};

} // namespace

int main(int argc, char** argv) {
    std::vector<int> picks;
    for (int i = 1; i < argc; ++i) {
        int id = std::atoi(argv[i]);
        if (id < 1 || id > 11) {
            std::fprintf(stderr, "unknown criterion '%s' (valid: 1-11)\n", argv[i]);
            return 1;
        }
        picks.push_back(id);
    }

    int failures = 0;
    for (const Criterion& c : kCriteria) {
        if (!picks.empty() && std::find(picks.begin(), picks.end(), c.id) == picks.end()) continue;
        Clock::time_point start = Clock::now();
        std::string note;
        std::string reason;
        bool ok = true;
        try {
            note = c.fn();
        } catch (const std::exception& e) {
            ok = false;
            reason = e.what();
        }
        std::printf("[%s] criterion %d: %s (%.1fs)\n", ok ? "PASS" : "FAIL", c.id, c.what,
                    seconds_since(start));
        if (!note.empty()) std::printf("        %s\n", note.c_str());
        if (!ok) {
            std::printf("        reason: %s\n", reason.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    return failures;
}
