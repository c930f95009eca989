#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adapterlab/model.hpp"
#include "adapterlab/rng.hpp"

namespace adapterlab::data {

using core::Rng;

/// Token string <-> id map with fixed reserved ids at the front.
struct Vocabulary {
    static constexpr int pad_id = 0;
    static constexpr int cls_id = 1;
    static constexpr int sep_id = 2;
    static constexpr int mask_id = 3;
    static constexpr int unk_id = 4;
    static constexpr int num_reserved = 5;

    std::vector<std::string> tokens;
    std::map<std::string, int, std::less<>> ids;

    int size() const { return static_cast<int>(tokens.size()); }
    int id_of(std::string_view token) const;
    const std::string& token_of(int id) const;

    static Vocabulary reserved_only();
    /// Rebuilds from an explicit token list (e.g. a stored model vocabulary);
    /// the first five entries must be the reserved tokens in order.
    static Vocabulary from_tokens(std::vector<std::string> tokens);
};

struct TokenizerSettings {
    int min_freq = 1;  // tokens rarer than this map to [UNK]
    int max_vocab = 0; // 0 = unlimited (including reserved entries)
};

struct TokenizedCorpus {
    Vocabulary vocab;
    std::vector<std::vector<int>> sequences; // content ids, no [CLS]/[SEP]
};

std::vector<std::string> split_lowercase(const std::string& line);

/// Lowercased whitespace tokenization; ids assigned by (frequency desc,
/// token asc) after the reserved block.
TokenizedCorpus tokenize_corpus(const std::vector<std::string>& lines,
                                const TokenizerSettings& settings = {});

/// [CLS] + content + [SEP], truncating content to fit max_len.
std::vector<int> encode_sequence(const std::vector<int>& content_ids, int max_len);

struct LabeledExample {
    std::vector<int> ids; // [CLS] ... [SEP], unpadded
    int label = 0;
};

struct TaskDataset {
    std::vector<LabeledExample> train;
    std::vector<LabeledExample> dev;
    std::vector<LabeledExample> test;
    std::vector<std::string> label_names;
    std::string provenance;
    Vocabulary vocab;

    int num_classes() const { return static_cast<int>(label_names.size()); }
    const std::vector<LabeledExample>& split(std::string_view name) const;
};

std::vector<std::string> read_lines(const std::string& path);

/// Loads train.tsv / dev.tsv / test.tsv (text<TAB>label per line) from a
/// directory. The vocabulary comes from the train texts; labels are the
/// sorted union across splits.
TaskDataset load_task_tsv(const std::string& dir, const TokenizerSettings& settings = {},
                          int max_len = 128);

struct RawExample {
    std::string text;
    std::string label;
};

struct RawSplits {
    std::vector<RawExample> train;
    std::vector<RawExample> dev;
    std::vector<RawExample> test;
};

void save_task_tsv(const std::string& dir, const RawSplits& splits);

/// Shared encoding path: vocabulary from the train texts, labels sorted
/// across splits, every example wrapped as [CLS] ... [SEP].
TaskDataset encode_raw(const RawSplits& raw, const TokenizerSettings& settings, int max_len,
                       std::string provenance);

/// Uniform without replacement over the train split (dev/test untouched).
/// The stratified variant keeps per-class proportions.
TaskDataset subsample_low_resource(const TaskDataset& dataset, int k, std::uint64_t seed,
                                   bool stratified = false);

struct MlmMasking {
    model::TokenBatch masked;
    std::vector<int> positions; // flattened batch*seq indices
    std::vector<int> targets;   // original ids at those positions
};

/// 15% of non-special positions; of those 80% -> [MASK], 10% -> random
/// non-reserved token, 10% unchanged.
MlmMasking mask_for_mlm(const model::TokenBatch& batch, Rng& rng, int vocab_size);

struct SplitSizes {
    int train = 1000;
    int dev = 200;
    int test = 200;
};

/// Keyword-classification task: each class owns a disjoint keyword set and
/// every example contains at least one keyword of its true class, so a
/// keyword-lookup rule is Bayes optimal (accuracy 1 at zero label noise).
/// Label noise resamples the label uniformly with the given rate.
struct SyntheticTaskSpec {
    int vocab_size = 256;    // includes the reserved block
    int num_classes = 2;
    int keywords_per_class = 4;
    double keyword_rate = 0.15;
    int min_len = 8;
    int max_len = 24;
    double label_noise = 0.0;
    std::uint64_t seed = 0;
};

std::string keyword_token(int cls, int j);
std::string class_label(int cls);

RawSplits generate_synthetic_raw(const SyntheticTaskSpec& spec, const SplitSizes& sizes);
TaskDataset generate_synthetic_task(const SyntheticTaskSpec& spec, const SplitSizes& sizes,
                                    const TokenizerSettings& settings = {}, int max_len = 128);

struct LabeledBatches {
    std::vector<model::TokenBatch> batches;
    std::vector<std::vector<int>> labels;
};

/// Groups examples into batches, padding each batch to its longest sequence.
/// A shuffle stream reorders examples first; the final short batch is kept.
LabeledBatches make_batches(const std::vector<LabeledExample>& examples, int batch_size,
                            Rng* shuffle = nullptr);

std::vector<model::TokenBatch> make_sequence_batches(const std::vector<std::vector<int>>& encoded,
                                                     int batch_size, Rng* shuffle = nullptr);

} // namespace adapterlab::data
