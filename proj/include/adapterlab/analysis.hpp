#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "adapterlab/data.hpp"
#include "adapterlab/model.hpp"
#include "adapterlab/tuning.hpp"

namespace adapterlab::analysis {

using core::Rng;
using core::Tensor;

/// Flat copy of every parameter value, used to move a model along straight
/// lines in weight space and to diff training outcomes.
struct SnapshotEntry {
    std::string name;
    std::vector<int> shape;
    std::int64_t offset = 0;
    std::int64_t length = 0;
};

struct ModelSnapshot {
    std::vector<SnapshotEntry> entries;
    std::vector<double> values;

    std::int64_t size() const { return static_cast<std::int64_t>(values.size()); }
};

ModelSnapshot snapshot_parameters(const model::EncoderModel& m);

/// Writes the snapshot back into the model, bit for bit. The snapshot must
/// list the model's parameters in registration order with matching shapes.
void restore_parameters(model::EncoderModel& m, const ModelSnapshot& snap);

struct RSAConfig {
    int sample_size = 512;
    std::uint64_t seed = 0;
    std::vector<int> skip_token_ids = {0, 1, 2}; // padding and boundary markers
};

/// (example index, position) pair anchoring one sampled token occurrence.
using TokenRef = std::pair<std::int64_t, int>;

struct RepresentationSet {
    std::string model_id;
    std::vector<Tensor> layers; // N+1 matrices, each {n,d}
    std::vector<TokenRef> tokens;
    bool sample_exhausted = false; // fewer eligible occurrences than requested
};

/// Deterministically samples up to cfg.sample_size eligible token occurrences
/// (ids outside cfg.skip_token_ids). Fewer than 3 eligible occurrences is an
/// error; fewer than requested uses all of them and sets *exhausted.
std::vector<TokenRef> sample_token_refs(const std::vector<data::LabeledExample>& examples,
                                        const RSAConfig& cfg, bool* exhausted = nullptr);

/// Hidden states at the given token occurrences for every layer, eval mode.
/// Pass the same token list to compare several models on identical anchors.
RepresentationSet collect_representations(model::EncoderModel& m,
                                          const std::vector<data::LabeledExample>& examples,
                                          const std::vector<TokenRef>& tokens,
                                          std::string model_id = "", int batch_size = 32);
RepresentationSet collect_representations(model::EncoderModel& m,
                                          const std::vector<data::LabeledExample>& examples,
                                          const RSAConfig& cfg, std::string model_id = "",
                                          int batch_size = 32);

/// Pearson correlation between the strict upper triangles of the two row-wise
/// cosine similarity matrices. Rows of a and b are paired observations; both
/// need at least 3 rows, no zero-norm rows, and non-constant similarities.
double rsa_score(const Tensor& a, const Tensor& b);

/// rsa_score per layer; both sets must come from the same token sample.
std::vector<double> rsa_layer_scores(const RepresentationSet& a, const RepresentationSet& b);

struct LandscapePoint {
    double alpha = 0.0;
    double loss = 0.0;
};

/// 21 alphas from -2 to 2, step 0.2.
std::vector<double> default_alpha_grid();

/// Mean loss of the model at theta0 + alpha * (theta1 - theta0) for each
/// alpha, eval mode over the whole split. The model is left at theta1.
std::vector<LandscapePoint> loss_landscape(model::EncoderModel& m, const ModelSnapshot& theta0,
                                           const ModelSnapshot& theta1,
                                           const std::vector<data::LabeledExample>& split,
                                           const std::vector<double>& alphas, int batch_size = 32);

struct Quartiles {
    double min = 0.0;
    double q1 = 0.0;
    double median = 0.0;
    double q3 = 0.0;
    double max = 0.0;

    double iqr() const { return q3 - q1; }
};

/// Order statistics with linear interpolation between neighbors, so
/// {1,2,3,4,5} yields quartiles 2, 3, 4.
Quartiles quartiles(std::vector<double> values);

struct SweepCell {
    double lr = 0.0;
    std::uint64_t seed = 0;
    double metric = 0.0;
    bool failed = false;
    std::string note; // failure reason when failed
};

struct LrQuartiles {
    double lr = 0.0;
    Quartiles stats;
};

struct SweepResult {
    std::vector<SweepCell> cells; // lr-major, seed-minor
    std::vector<LrQuartiles> per_lr;
};

std::vector<double> default_sweep_lrs(); // 2e-5 .. 1e-4

/// Trains one clone of the base model per (lr, seed) cell and scores it on
/// the test split. A run that throws or goes non-finite counts as failed
/// with metric 0, and still enters the per-lr quartiles.
SweepResult lr_sweep(const model::EncoderModel& base, const data::TaskDataset& dataset,
                     const tuning::TuningPolicy& policy, const std::vector<double>& lrs,
                     const std::vector<std::uint64_t>& seeds,
                     const tuning::TrainConfig& base_cfg);

struct GroupDeviation {
    std::string group;
    double l2 = 0.0;       // |theta1 - theta0| over the group
    double relative = 0.0; // l2 / |theta0|, 0 when both vanish
};

/// Drift between two snapshots of the same model, grouped by parameter name
/// with the last component (.weight, .bias, ...) stripped.
std::vector<GroupDeviation> parameter_deviation(const ModelSnapshot& theta0,
                                                const ModelSnapshot& theta1);

} // namespace adapterlab::analysis
