#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <string>
#include <vector>

#include "adapterlab/analysis.hpp"
#include "adapterlab/data.hpp"
#include "adapterlab/model.hpp"
#include "adapterlab/tuning.hpp"

using namespace adapterlab;
using adapterlab::core::Rng;
using adapterlab::core::Tensor;

namespace {

model::TransformerConfig tiny_config(int vocab) {
    model::TransformerConfig cfg;
    cfg.num_layers = 2;
    cfg.model_dim = 16;
    cfg.num_heads = 2;
    cfg.ffn_dim = 32;
    cfg.vocab_size = vocab;
    cfg.max_seq_len = 24;
    cfg.dropout_rate = 0.1;
    return cfg;
}

data::TaskDataset tiny_task(std::uint64_t seed = 4) {
    data::SyntheticTaskSpec spec;
    spec.vocab_size = 48;
    spec.keyword_rate = 0.4;
    spec.min_len = 4;
    spec.max_len = 8;
    spec.seed = seed;
    return data::generate_synthetic_task(spec, {96, 24, 24});
}

Tensor random_matrix(int rows, int cols, Rng& rng) {
    Tensor t({rows, cols});
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = rng.normal();
    return t;
}

// Gram-Schmidt on a random square matrix; rows become an orthonormal basis.
Tensor random_orthogonal(int n, Rng& rng) {
    Tensor q = random_matrix(n, n, rng);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < i; ++j) {
            double dot = 0.0;
            for (int k = 0; k < n; ++k) dot += q.at({i, k}) * q.at({j, k});
            for (int k = 0; k < n; ++k) q.at({i, k}) -= dot * q.at({j, k});
        }
        double norm = 0.0;
        for (int k = 0; k < n; ++k) norm += q.at({i, k}) * q.at({i, k});
        norm = std::sqrt(norm);
        for (int k = 0; k < n; ++k) q.at({i, k}) /= norm;
    }
    return q;
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    Tensor c({a.dim(0), b.dim(1)});
    for (int i = 0; i < a.dim(0); ++i)
        for (int j = 0; j < b.dim(1); ++j) {
            double s = 0.0;
            for (int k = 0; k < a.dim(1); ++k) s += a.at({i, k}) * b.at({k, j});
            c.at({i, j}) = s;
        }
    return c;
}

} // namespace

TEST_CASE("snapshot and restore round trip bit-exactly") {
    model::EncoderModel m(tiny_config(32), std::nullopt, 2, 7);
    analysis::ModelSnapshot snap = analysis::snapshot_parameters(m);
    CHECK(snap.entries.size() == m.parameters().size());
    std::int64_t total = 0;
    for (const auto& p : m.parameters()) total += p.value.size();
    CHECK(snap.size() == total);

    std::vector<double> original = snap.values;
    for (auto& p : m.parameters())
        for (std::int64_t i = 0; i < p.value.size(); ++i) p.value[i] += 0.125;
    analysis::restore_parameters(m, snap);
    analysis::ModelSnapshot after = analysis::snapshot_parameters(m);
    CHECK(std::memcmp(after.values.data(), original.data(), original.size() * sizeof(double)) == 0);

    model::EncoderModel other(tiny_config(40), std::nullopt, 2, 7);
    CHECK_THROWS(analysis::restore_parameters(other, snap));
}

TEST_CASE("token sampling is deterministic and respects the skip list") {
    data::TaskDataset ds = tiny_task();
    analysis::RSAConfig cfg;
    cfg.sample_size = 64;
    cfg.seed = 5;
    bool exhausted = true;
    std::vector<analysis::TokenRef> refs = analysis::sample_token_refs(ds.dev, cfg, &exhausted);
    CHECK(refs.size() == 64);
    CHECK_FALSE(exhausted);
    std::set<analysis::TokenRef> unique(refs.begin(), refs.end());
    CHECK(unique.size() == refs.size());
    for (const auto& [ex, pos] : refs) {
        REQUIRE(ex >= 0);
        REQUIRE(ex < static_cast<std::int64_t>(ds.dev.size()));
        int id = ds.dev[static_cast<std::size_t>(ex)].ids[static_cast<std::size_t>(pos)];
        CHECK(id != 0);
        CHECK(id != 1);
        CHECK(id != 2);
    }
    std::vector<analysis::TokenRef> again = analysis::sample_token_refs(ds.dev, cfg);
    CHECK(refs == again);

    analysis::RSAConfig big = cfg;
    big.sample_size = 100000;
    exhausted = false;
    std::vector<analysis::TokenRef> all = analysis::sample_token_refs(ds.dev, big, &exhausted);
    CHECK(exhausted);
    CHECK(all.size() < 100000);
    CHECK(all.size() >= 3);

    std::vector<data::LabeledExample> starved = {{{1, 2}, 0}, {{1, 2}, 1}};
    CHECK_THROWS(analysis::sample_token_refs(starved, cfg));
}

TEST_CASE("representation collection lines up with the token sample") {
    data::TaskDataset ds = tiny_task();
    model::EncoderModel m(tiny_config(ds.vocab.size()), std::nullopt, 2, 3);
    analysis::RSAConfig cfg;
    cfg.sample_size = 32;
    std::vector<analysis::TokenRef> refs = analysis::sample_token_refs(ds.dev, cfg);
    analysis::RepresentationSet set = analysis::collect_representations(m, ds.dev, refs, "m0");
    CHECK(set.model_id == "m0");
    REQUIRE(set.layers.size() == 3); // embeddings plus two layers
    for (const auto& layer : set.layers)
        CHECK(layer.shape() == std::vector<int>{32, 16});
    CHECK(set.tokens == refs);

    // Same model, same anchors: every layer correlates perfectly with itself.
    analysis::RepresentationSet twin = analysis::collect_representations(m, ds.dev, refs, "m1");
    std::vector<double> scores = analysis::rsa_layer_scores(set, twin);
    REQUIRE(scores.size() == 3);
    for (double s : scores) CHECK(s == doctest::Approx(1.0).epsilon(1e-9));

    analysis::RepresentationSet from_cfg =
        analysis::collect_representations(m, ds.dev, cfg, "m2");
    CHECK(from_cfg.tokens == refs); // the config overload draws the same sample
    CHECK_THROWS(analysis::rsa_layer_scores(
        set, analysis::collect_representations(
                 m, ds.dev, std::vector<analysis::TokenRef>(refs.begin(), refs.begin() + 16))));
}

TEST_CASE("rsa invariances") {
    Rng rng(19);
    Tensor a = random_matrix(24, 16, rng);
    CHECK(analysis::rsa_score(a, a) == doctest::Approx(1.0).epsilon(1e-9));

    Tensor q = random_orthogonal(16, rng);
    Tensor rotated = matmul_plain(a, q);
    CHECK(analysis::rsa_score(a, rotated) == doctest::Approx(1.0).epsilon(1e-6));

    Tensor flipped = a;
    for (std::int64_t i = 0; i < flipped.size(); ++i) flipped[i] = -flipped[i];
    CHECK(analysis::rsa_score(a, flipped) == analysis::rsa_score(a, a)); // exact

    Tensor scaled = a;
    for (std::int64_t i = 0; i < scaled.size(); ++i) scaled[i] *= 3.5;
    CHECK(analysis::rsa_score(a, scaled) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("rsa hand example with perfectly inverted geometry") {
    // Row angles 0, 60, 90 degrees: cosines {0.5, 0, sqrt(3)/2}.
    Tensor a({3, 2}, {1.0, 0.0, 0.5, std::sqrt(3.0) / 2.0, 0.0, 1.0});
    // Rows built so the cosines are 0.8 - 0.8 * (the first set).
    Tensor b({3, 3},
             {1.0, 0.0, 0.0,
              0.4, 0.91651513899116799, 0.0,
              0.8, -0.23220600945207276, 0.5532453065090962});
    CHECK(analysis::rsa_score(a, b) == doctest::Approx(-1.0).epsilon(1e-9));
}

TEST_CASE("rsa rejects degenerate inputs") {
    Rng rng(20);
    Tensor a = random_matrix(5, 4, rng);
    Tensor fewer = random_matrix(4, 4, rng);
    CHECK_THROWS(analysis::rsa_score(a, fewer)); // row counts must match
    Tensor two = random_matrix(2, 4, rng);
    CHECK_THROWS(analysis::rsa_score(two, two)); // needs at least 3 rows

    Tensor zero_row = a;
    for (int k = 0; k < 4; ++k) zero_row.at({1, k}) = 0.0;
    CHECK_THROWS(analysis::rsa_score(zero_row, a));
    CHECK_THROWS(analysis::rsa_score(a, zero_row));

    // Identical rows give constant similarities: correlation is undefined.
    Tensor constant({3, 2}, {1, 2, 1, 2, 1, 2});
    Tensor spread({3, 2}, {1, 0, 0, 1, 1, 1});
    CHECK_THROWS(analysis::rsa_score(constant, spread));

    Tensor scalar_shape({4}, {1, 2, 3, 4});
    CHECK_THROWS(analysis::rsa_score(scalar_shape, scalar_shape));
}

TEST_CASE("alpha grid covers [-2,2] in steps of 0.2") {
    std::vector<double> grid = analysis::default_alpha_grid();
    REQUIRE(grid.size() == 21);
    CHECK(grid.front() == -2.0);
    CHECK(grid.back() == 2.0);
    CHECK(grid[10] == 0.0);
    for (std::size_t i = 1; i < grid.size(); ++i)
        CHECK(grid[i] - grid[i - 1] == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("loss landscape hits both endpoints and leaves the model at theta1") {
    data::TaskDataset ds = tiny_task();
    model::EncoderModel m(tiny_config(ds.vocab.size()), std::nullopt, ds.num_classes(), 5);
    analysis::ModelSnapshot theta0 = analysis::snapshot_parameters(m);

    Rng rng(31);
    for (auto& p : m.parameters())
        for (std::int64_t i = 0; i < p.value.size(); ++i) p.value[i] += 0.02 * rng.normal();
    analysis::ModelSnapshot theta1 = analysis::snapshot_parameters(m);

    double loss1 = tuning::dataset_loss(m, ds.dev);
    analysis::restore_parameters(m, theta0);
    double loss0 = tuning::dataset_loss(m, ds.dev);

    std::vector<double> alphas = {0.0, 0.5, 1.0};
    std::vector<analysis::LandscapePoint> curve =
        analysis::loss_landscape(m, theta0, theta1, ds.dev, alphas);
    REQUIRE(curve.size() == 3);
    CHECK(curve[0].alpha == 0.0);
    CHECK(curve[0].loss == doctest::Approx(loss0).epsilon(1e-10));
    CHECK(curve[2].loss == doctest::Approx(loss1).epsilon(1e-10));

    // Midpoint agrees with evaluating an explicitly blended parameter vector.
    analysis::ModelSnapshot blend = theta0;
    for (std::size_t i = 0; i < blend.values.size(); ++i)
        blend.values[i] = theta0.values[i] + 0.5 * (theta1.values[i] - theta0.values[i]);
    model::EncoderModel probe(tiny_config(ds.vocab.size()), std::nullopt, ds.num_classes(), 5);
    analysis::restore_parameters(probe, blend);
    CHECK(curve[1].loss == doctest::Approx(tuning::dataset_loss(probe, ds.dev)).epsilon(1e-10));

    // The model ends the walk at theta1.
    analysis::ModelSnapshot final_state = analysis::snapshot_parameters(m);
    CHECK(std::memcmp(final_state.values.data(), theta1.values.data(),
                      theta1.values.size() * sizeof(double)) == 0);

    analysis::ModelSnapshot truncated = theta1;
    truncated.entries.pop_back();
    CHECK_THROWS(analysis::loss_landscape(m, theta0, truncated, ds.dev, alphas));
}

TEST_CASE("quartiles interpolate order statistics") {
    analysis::Quartiles q = analysis::quartiles({5, 3, 1, 4, 2});
    CHECK(q.min == 1.0);
    CHECK(q.q1 == 2.0);
    CHECK(q.median == 3.0);
    CHECK(q.q3 == 4.0);
    CHECK(q.max == 5.0);
    CHECK(q.iqr() == 2.0);

    analysis::Quartiles two = analysis::quartiles({2, 1});
    CHECK(two.q1 == doctest::Approx(1.25).epsilon(1e-12));
    CHECK(two.median == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(two.q3 == doctest::Approx(1.75).epsilon(1e-12));

    analysis::Quartiles one = analysis::quartiles({7});
    CHECK(one.min == 7.0);
    CHECK(one.median == 7.0);
    CHECK(one.max == 7.0);
    CHECK(one.iqr() == 0.0);

    CHECK_THROWS(analysis::quartiles({}));
}

TEST_CASE("default sweep grid") {
    std::vector<double> lrs = analysis::default_sweep_lrs();
    CHECK(lrs == std::vector<double>{2e-5, 4e-5, 6e-5, 8e-5, 1e-4});
}

TEST_CASE("lr sweep records diverged cells as zero and keeps the base intact") {
    data::TaskDataset ds = tiny_task();
    model::EncoderModel base(tiny_config(ds.vocab.size()), std::nullopt, ds.num_classes(), 2);
    analysis::ModelSnapshot before = analysis::snapshot_parameters(base);

    tuning::TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 16;
    // Layer norms keep moderately absurd learning rates finite in binary64,
    // so overflow needs a step size near the representable limit.
    std::vector<double> lrs = {1e300, 2e-3};
    std::vector<std::uint64_t> seeds = {0, 1};
    analysis::SweepResult result =
        analysis::lr_sweep(base, ds, tuning::TuningPolicy::full_finetune(), lrs, seeds, cfg);

    REQUIRE(result.cells.size() == 4);
    CHECK(result.cells[0].lr == 1e300);
    CHECK(result.cells[0].seed == 0);
    CHECK(result.cells[1].seed == 1);
    CHECK(result.cells[2].lr == 2e-3);
    for (int i = 0; i < 2; ++i) {
        CHECK(result.cells[static_cast<std::size_t>(i)].failed);
        CHECK(result.cells[static_cast<std::size_t>(i)].metric == 0.0);
        CHECK_FALSE(result.cells[static_cast<std::size_t>(i)].note.empty());
    }
    for (int i = 2; i < 4; ++i) {
        CHECK_FALSE(result.cells[static_cast<std::size_t>(i)].failed);
        CHECK(result.cells[static_cast<std::size_t>(i)].metric > 0.0);
    }

    REQUIRE(result.per_lr.size() == 2);
    CHECK(result.per_lr[0].lr == 1e300);
    CHECK(result.per_lr[0].stats.max == 0.0); // failures enter the statistics
    CHECK(result.per_lr[1].stats.min > 0.0);

    // Sweeping trains clones; the base model never moves.
    analysis::ModelSnapshot after = analysis::snapshot_parameters(base);
    CHECK(std::memcmp(after.values.data(), before.values.data(),
                      before.values.size() * sizeof(double)) == 0);
}

TEST_CASE("parameter deviation groups by tensor prefix") {
    model::EncoderModel m(tiny_config(32), std::nullopt, 2, 7);
    analysis::ModelSnapshot theta0 = analysis::snapshot_parameters(m);
    m.param("layer.0.ffn.in.weight").value[0] += 3.0;
    m.param("layer.0.ffn.in.weight").value[1] -= 4.0;
    analysis::ModelSnapshot theta1 = analysis::snapshot_parameters(m);

    std::vector<analysis::GroupDeviation> groups = analysis::parameter_deviation(theta0, theta1);
    bool found = false;
    for (const auto& g : groups) {
        if (g.group == "layer.0.ffn.in") {
            found = true;
            CHECK(g.l2 == doctest::Approx(5.0).epsilon(1e-12)); // 3-4-5 triangle
            CHECK(g.relative > 0.0);
        } else {
            CHECK(g.l2 == 0.0);
            CHECK(g.relative == 0.0);
        }
    }
    CHECK(found);

    analysis::ModelSnapshot other = theta1;
    other.entries[0].name = "renamed";
    CHECK_THROWS(analysis::parameter_deviation(theta0, other));
}
