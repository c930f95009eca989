#include "adapterlab/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <stdexcept>

namespace adapterlab::analysis {

ModelSnapshot snapshot_parameters(const model::EncoderModel& m) {
    ModelSnapshot snap;
    const auto& params = m.parameters();
    snap.entries.reserve(params.size());
    std::int64_t offset = 0;
    for (const auto& p : params) {
        SnapshotEntry e;
        e.name = p.name;
        e.shape = p.value.shape();
        e.offset = offset;
        e.length = p.value.size();
        offset += e.length;
        snap.entries.push_back(std::move(e));
    }
    snap.values.reserve(static_cast<std::size_t>(offset));
    for (const auto& p : params)
        snap.values.insert(snap.values.end(), p.value.vec().begin(), p.value.vec().end());
    return snap;
}

void restore_parameters(model::EncoderModel& m, const ModelSnapshot& snap) {
    auto& params = m.parameters();
    if (snap.entries.size() != params.size())
        throw std::runtime_error("snapshot has " + std::to_string(snap.entries.size()) +
                                 " parameters but the model has " + std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const SnapshotEntry& e = snap.entries[i];
        core::Parameter& p = params[i];
        if (e.name != p.name)
            throw std::runtime_error("snapshot parameter " + e.name + " does not match model parameter " +
                                     p.name);
        if (e.shape != p.value.shape() || e.length != p.value.size())
            throw std::runtime_error("snapshot shape mismatch for " + e.name);
        if (e.offset < 0 || e.offset + e.length > snap.size())
            throw std::runtime_error("snapshot offsets exceed its value block");
        std::copy_n(snap.values.begin() + e.offset, static_cast<std::size_t>(e.length),
                    p.value.vec().begin());
    }
}

std::vector<TokenRef> sample_token_refs(const std::vector<data::LabeledExample>& examples,
                                        const RSAConfig& cfg, bool* exhausted) {
    if (cfg.sample_size < 3)
        throw std::runtime_error("representation sampling needs at least 3 occurrences, requested " +
                                 std::to_string(cfg.sample_size));
    std::vector<TokenRef> eligible;
    for (std::size_t e = 0; e < examples.size(); ++e) {
        const auto& ids = examples[e].ids;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (std::find(cfg.skip_token_ids.begin(), cfg.skip_token_ids.end(), ids[p]) !=
                cfg.skip_token_ids.end())
                continue;
            eligible.emplace_back(static_cast<std::int64_t>(e), static_cast<int>(p));
        }
    }
    if (eligible.size() < 3)
        throw std::runtime_error("only " + std::to_string(eligible.size()) +
                                 " eligible token occurrences; representation sampling needs at least 3");
    bool short_sample = eligible.size() < static_cast<std::size_t>(cfg.sample_size);
    if (exhausted) *exhausted = short_sample;
    if (short_sample) return eligible;

    Rng rng(cfg.seed);
    Rng sampler = rng.fork("sampling");
    auto picks = sampler.sample_without_replacement(static_cast<std::int64_t>(eligible.size()),
                                                    cfg.sample_size);
    std::vector<TokenRef> out;
    out.reserve(picks.size());
    for (std::int64_t idx : picks) out.push_back(eligible[static_cast<std::size_t>(idx)]);
    return out;
}

RepresentationSet collect_representations(model::EncoderModel& m,
                                          const std::vector<data::LabeledExample>& examples,
                                          const std::vector<TokenRef>& tokens,
                                          std::string model_id, int batch_size) {
    if (tokens.size() < 3)
        throw std::runtime_error("representation collection needs at least 3 token occurrences");
    if (batch_size <= 0) throw std::runtime_error("batch_size must be positive");

    std::map<std::int64_t, std::vector<std::size_t>> refs_by_example;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        auto [e, p] = tokens[i];
        if (e < 0 || e >= static_cast<std::int64_t>(examples.size()))
            throw std::runtime_error("token reference names example " + std::to_string(e) +
                                     " outside the split");
        if (p < 0 || p >= static_cast<int>(examples[static_cast<std::size_t>(e)].ids.size()))
            throw std::runtime_error("token reference names position " + std::to_string(p) +
                                     " outside example " + std::to_string(e));
        refs_by_example[e].push_back(i);
    }

    int num_layers = m.config().num_layers + 1;
    int d = m.config().model_dim;
    RepresentationSet out;
    out.model_id = std::move(model_id);
    out.tokens = tokens;
    out.layers.assign(static_cast<std::size_t>(num_layers),
                      Tensor::zeros({static_cast<int>(tokens.size()), d}));

    std::vector<std::int64_t> uniq;
    uniq.reserve(refs_by_example.size());
    for (const auto& kv : refs_by_example) uniq.push_back(kv.first);

    for (std::size_t start = 0; start < uniq.size(); start += static_cast<std::size_t>(batch_size)) {
        std::size_t end = std::min(uniq.size(), start + static_cast<std::size_t>(batch_size));
        int chunk_n = static_cast<int>(end - start);
        int seq = 0;
        for (std::size_t j = start; j < end; ++j)
            seq = std::max(seq, static_cast<int>(examples[static_cast<std::size_t>(uniq[j])].ids.size()));
        model::TokenBatch tb;
        tb.batch = chunk_n;
        tb.seq = seq;
        tb.ids.assign(static_cast<std::size_t>(chunk_n) * seq, data::Vocabulary::pad_id);
        for (std::size_t j = start; j < end; ++j) {
            const auto& ids = examples[static_cast<std::size_t>(uniq[j])].ids;
            std::copy(ids.begin(), ids.end(), tb.ids.begin() + static_cast<std::ptrdiff_t>((j - start) * seq));
        }
        model::EncoderOutputs outs = m.forward_values(tb);
        for (std::size_t j = start; j < end; ++j) {
            int local = static_cast<int>(j - start);
            for (std::size_t ref : refs_by_example[uniq[j]]) {
                int pos = tokens[ref].second;
                for (int l = 0; l < num_layers; ++l) {
                    const double* src = outs.hidden[static_cast<std::size_t>(l)].data() +
                                        (static_cast<std::int64_t>(local) * seq + pos) * d;
                    double* dst = out.layers[static_cast<std::size_t>(l)].data() +
                                  static_cast<std::int64_t>(ref) * d;
                    std::memcpy(dst, src, sizeof(double) * static_cast<std::size_t>(d));
                }
            }
        }
    }
    return out;
}

RepresentationSet collect_representations(model::EncoderModel& m,
                                          const std::vector<data::LabeledExample>& examples,
                                          const RSAConfig& cfg, std::string model_id,
                                          int batch_size) {
    bool exhausted = false;
    auto tokens = sample_token_refs(examples, cfg, &exhausted);
    RepresentationSet out =
        collect_representations(m, examples, tokens, std::move(model_id), batch_size);
    out.sample_exhausted = exhausted;
    return out;
}

namespace {

std::vector<double> cosine_upper_triangle(const Tensor& t, const char* which) {
    int n = t.dim(0), d = t.dim(1);
    std::vector<double> norms(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double* row = t.data() + static_cast<std::int64_t>(i) * d;
        double s = 0.0;
        for (int c = 0; c < d; ++c) s += row[c] * row[c];
        if (s == 0.0)
            throw std::runtime_error(std::string(which) + " representation row " + std::to_string(i) +
                                     " has zero norm; cosine similarity is undefined");
        norms[static_cast<std::size_t>(i)] = std::sqrt(s);
    }
    std::vector<double> tri;
    tri.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i) {
        const double* ri = t.data() + static_cast<std::int64_t>(i) * d;
        for (int j = i + 1; j < n; ++j) {
            const double* rj = t.data() + static_cast<std::int64_t>(j) * d;
            double dot = 0.0;
            for (int c = 0; c < d; ++c) dot += ri[c] * rj[c];
            tri.push_back(dot / (norms[static_cast<std::size_t>(i)] * norms[static_cast<std::size_t>(j)]));
        }
    }
    return tri;
}

} // namespace

double rsa_score(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::runtime_error("rsa_score expects 2-D representation matrices, got " +
                                 a.shape_str() + " and " + b.shape_str());
    if (a.dim(0) != b.dim(0))
        throw std::runtime_error("representation sets pair " + std::to_string(a.dim(0)) +
                                 " rows with " + std::to_string(b.dim(0)));
    if (a.dim(0) < 3)
        throw std::runtime_error("rsa_score needs at least 3 rows, got " + std::to_string(a.dim(0)));

    std::vector<double> u = cosine_upper_triangle(a, "first");
    std::vector<double> v = cosine_upper_triangle(b, "second");
    double mu = 0.0, mv = 0.0;
    auto n = static_cast<double>(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
        mu += u[k];
        mv += v[k];
    }
    mu /= n;
    mv /= n;
    // A constant similarity pattern leaves rounding noise around the mean, so
    // detect it on the raw values rather than the accumulated variance.
    bool u_constant = std::all_of(u.begin(), u.end(), [&](double x) { return x == u[0]; });
    bool v_constant = std::all_of(v.begin(), v.end(), [&](double x) { return x == v[0]; });
    double suu = 0.0, svv = 0.0, suv = 0.0;
    for (std::size_t k = 0; k < u.size(); ++k) {
        double du = u[k] - mu, dv = v[k] - mv;
        suu += du * du;
        svv += dv * dv;
        suv += du * dv;
    }
    if (u_constant || v_constant || suu == 0.0 || svv == 0.0)
        throw std::runtime_error("similarity pattern has zero variance; correlation is undefined");
    return suv / std::sqrt(suu * svv);
}

std::vector<double> rsa_layer_scores(const RepresentationSet& a, const RepresentationSet& b) {
    if (a.layers.size() != b.layers.size())
        throw std::runtime_error("representation sets cover " + std::to_string(a.layers.size()) +
                                 " and " + std::to_string(b.layers.size()) + " layers");
    if (a.tokens != b.tokens)
        throw std::runtime_error("representation sets were sampled at different token occurrences");
    std::vector<double> scores;
    scores.reserve(a.layers.size());
    for (std::size_t l = 0; l < a.layers.size(); ++l)
        scores.push_back(rsa_score(a.layers[l], b.layers[l]));
    return scores;
}

std::vector<double> default_alpha_grid() {
    std::vector<double> alphas;
    alphas.reserve(21);
    for (int i = 0; i <= 20; ++i) alphas.push_back(static_cast<double>(i - 10) / 5.0);
    return alphas;
}

std::vector<LandscapePoint> loss_landscape(model::EncoderModel& m, const ModelSnapshot& theta0,
                                           const ModelSnapshot& theta1,
                                           const std::vector<data::LabeledExample>& split,
                                           const std::vector<double>& alphas, int batch_size) {
    if (theta0.entries.size() != theta1.entries.size() || theta0.size() != theta1.size())
        throw std::runtime_error("landscape endpoints have different parameter layouts");
    for (std::size_t i = 0; i < theta0.entries.size(); ++i) {
        const auto& e0 = theta0.entries[i];
        const auto& e1 = theta1.entries[i];
        if (e0.name != e1.name || e0.shape != e1.shape || e0.offset != e1.offset)
            throw std::runtime_error("landscape endpoints disagree at parameter " + e0.name);
    }
    std::vector<LandscapePoint> points;
    points.reserve(alphas.size());
    ModelSnapshot blend = theta0;
    for (double alpha : alphas) {
        for (std::size_t k = 0; k < blend.values.size(); ++k)
            blend.values[k] = theta0.values[k] + alpha * (theta1.values[k] - theta0.values[k]);
        restore_parameters(m, blend);
        points.push_back({alpha, tuning::dataset_loss(m, split, batch_size)});
    }
    restore_parameters(m, theta1);
    return points;
}

Quartiles quartiles(std::vector<double> values) {
    if (values.empty()) throw std::runtime_error("cannot take quartiles of an empty sample");
    std::sort(values.begin(), values.end());
    auto at = [&](double f) {
        double pos = f * static_cast<double>(values.size() - 1);
        auto lo = static_cast<std::size_t>(pos);
        double frac = pos - static_cast<double>(lo);
        if (lo + 1 >= values.size()) return values.back();
        return values[lo] + frac * (values[lo + 1] - values[lo]);
    };
    Quartiles q;
    q.min = values.front();
    q.q1 = at(0.25);
    q.median = at(0.5);
    q.q3 = at(0.75);
    q.max = values.back();
    return q;
}

std::vector<double> default_sweep_lrs() { return {2e-5, 4e-5, 6e-5, 8e-5, 1e-4}; }

SweepResult lr_sweep(const model::EncoderModel& base, const data::TaskDataset& dataset,
                     const tuning::TuningPolicy& policy, const std::vector<double>& lrs,
                     const std::vector<std::uint64_t>& seeds,
                     const tuning::TrainConfig& base_cfg) {
    if (lrs.empty()) throw std::runtime_error("sweep needs at least one learning rate");
    if (seeds.empty()) throw std::runtime_error("sweep needs at least one seed");
    SweepResult result;
    result.cells.reserve(lrs.size() * seeds.size());
    for (double lr : lrs) {
        std::vector<double> metrics;
        metrics.reserve(seeds.size());
        for (std::uint64_t seed : seeds) {
            SweepCell cell;
            cell.lr = lr;
            cell.seed = seed;
            tuning::TrainConfig cfg = base_cfg;
            cfg.peak_lr = lr;
            cfg.seed = seed;
            model::EncoderModel candidate = base.clone();
            try {
                tuning::RunRecord rec = tuning::train(candidate, dataset, policy, cfg);
                if (!std::isfinite(rec.final_metric)) {
                    cell.failed = true;
                    cell.note = "non-finite test metric";
                } else {
                    cell.metric = rec.final_metric;
                }
            } catch (const std::exception& e) {
                cell.failed = true;
                cell.note = e.what();
            }
            metrics.push_back(cell.metric);
            result.cells.push_back(std::move(cell));
        }
        result.per_lr.push_back({lr, quartiles(metrics)});
    }
    return result;
}

std::vector<GroupDeviation> parameter_deviation(const ModelSnapshot& theta0,
                                                const ModelSnapshot& theta1) {
    if (theta0.entries.size() != theta1.entries.size() || theta0.size() != theta1.size())
        throw std::runtime_error("deviation endpoints have different parameter layouts");
    std::vector<GroupDeviation> groups;
    std::map<std::string, std::size_t> index;
    std::vector<double> base_sq;
    for (std::size_t i = 0; i < theta0.entries.size(); ++i) {
        const auto& e0 = theta0.entries[i];
        const auto& e1 = theta1.entries[i];
        if (e0.name != e1.name || e0.offset != e1.offset || e0.length != e1.length)
            throw std::runtime_error("deviation endpoints disagree at parameter " + e0.name);
        auto dot = e0.name.rfind('.');
        std::string group = dot == std::string::npos ? e0.name : e0.name.substr(0, dot);
        auto [it, fresh] = index.try_emplace(group, groups.size());
        if (fresh) {
            groups.push_back({group, 0.0, 0.0});
            base_sq.push_back(0.0);
        }
        GroupDeviation& g = groups[it->second];
        for (std::int64_t k = e0.offset; k < e0.offset + e0.length; ++k) {
            double diff = theta1.values[static_cast<std::size_t>(k)] -
                          theta0.values[static_cast<std::size_t>(k)];
            g.l2 += diff * diff;
            base_sq[it->second] += theta0.values[static_cast<std::size_t>(k)] *
                                   theta0.values[static_cast<std::size_t>(k)];
        }
    }
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        groups[gi].l2 = std::sqrt(groups[gi].l2);
        double base = std::sqrt(base_sq[gi]);
        if (base > 0.0)
            groups[gi].relative = groups[gi].l2 / base;
        else
            groups[gi].relative =
                groups[gi].l2 == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return groups;
}

} // namespace adapterlab::analysis
