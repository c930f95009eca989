#include "adapterlab/data.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

namespace adapterlab::data {

namespace {

constexpr double kMaskRate = 0.15;
constexpr double kMaskToMask = 0.8;
constexpr double kMaskToRandom = 0.9; // cumulative: [0.8,0.9) -> random token

const char* const kReserved[Vocabulary::num_reserved] = {"[PAD]", "[CLS]", "[SEP]", "[MASK]",
                                                         "[UNK]"};

} // namespace

int Vocabulary::id_of(std::string_view token) const {
    auto it = ids.find(token);
    return it == ids.end() ? unk_id : it->second;
}

const std::string& Vocabulary::token_of(int id) const {
    if (id < 0 || id >= size())
        throw std::runtime_error("token id " + std::to_string(id) +
                                 " is out of range for vocabulary of " + std::to_string(size()));
    return tokens[static_cast<std::size_t>(id)];
}

Vocabulary Vocabulary::reserved_only() {
    Vocabulary v;
    for (int i = 0; i < num_reserved; ++i) {
        v.tokens.emplace_back(kReserved[i]);
        v.ids.emplace(kReserved[i], i);
    }
    return v;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
    if (static_cast<int>(tokens.size()) < num_reserved)
        throw std::runtime_error("vocabulary needs at least the " + std::to_string(num_reserved) +
                                 " reserved tokens");
    for (int i = 0; i < num_reserved; ++i)
        if (tokens[static_cast<std::size_t>(i)] != kReserved[i])
            throw std::runtime_error("vocabulary slot " + std::to_string(i) + " must be " +
                                     kReserved[i] + ", got " + tokens[static_cast<std::size_t>(i)]);
    Vocabulary v;
    v.tokens = std::move(tokens);
    for (std::size_t i = 0; i < v.tokens.size(); ++i) {
        auto [it, inserted] = v.ids.emplace(v.tokens[i], static_cast<int>(i));
        if (!inserted)
            throw std::runtime_error("duplicate vocabulary token " + v.tokens[i]);
    }
    return v;
}

std::vector<std::string> split_lowercase(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (unsigned char c : line) {
        if (std::isspace(c)) {
            if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
        } else {
            cur.push_back(static_cast<char>(c < 128 ? std::tolower(c) : c));
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

TokenizedCorpus tokenize_corpus(const std::vector<std::string>& lines,
                                const TokenizerSettings& settings) {
    std::vector<std::vector<std::string>> tokenized;
    tokenized.reserve(lines.size());
    std::map<std::string, std::int64_t> freq;
    std::int64_t total = 0;
    for (const std::string& line : lines) {
        tokenized.push_back(split_lowercase(line));
        for (const std::string& t : tokenized.back()) {
            ++freq[t];
            ++total;
        }
    }
    if (total == 0) throw std::runtime_error("cannot build a vocabulary from an empty corpus");

    std::vector<std::pair<std::string, std::int64_t>> ranked(freq.begin(), freq.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    TokenizedCorpus out;
    out.vocab = Vocabulary::reserved_only();
    int budget = settings.max_vocab > 0
                     ? std::max(0, settings.max_vocab - Vocabulary::num_reserved)
                     : static_cast<int>(ranked.size());
    for (const auto& [token, count] : ranked) {
        if (count < settings.min_freq) break;
        if (static_cast<int>(out.vocab.tokens.size()) - Vocabulary::num_reserved >= budget) break;
        out.vocab.ids.emplace(token, out.vocab.size());
        out.vocab.tokens.push_back(token);
    }

    out.sequences.reserve(tokenized.size());
    for (const auto& words : tokenized) {
        std::vector<int> seq;
        seq.reserve(words.size());
        for (const std::string& w : words) seq.push_back(out.vocab.id_of(w));
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

std::vector<int> encode_sequence(const std::vector<int>& content_ids, int max_len) {
    if (max_len < 2) throw std::runtime_error("encoded sequences need room for [CLS] and [SEP]");
    auto keep = std::min<std::size_t>(content_ids.size(), static_cast<std::size_t>(max_len - 2));
    std::vector<int> out;
    out.reserve(keep + 2);
    out.push_back(Vocabulary::cls_id);
    out.insert(out.end(), content_ids.begin(), content_ids.begin() + static_cast<std::ptrdiff_t>(keep));
    out.push_back(Vocabulary::sep_id);
    return out;
}

const std::vector<LabeledExample>& TaskDataset::split(std::string_view name) const {
    if (name == "train") return train;
    if (name == "dev") return dev;
    if (name == "test") return test;
    throw std::runtime_error("unknown split " + std::string(name) +
                             " (expected train, dev, or test)");
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

namespace {

std::vector<RawExample> parse_tsv(const std::string& path) {
    std::vector<RawExample> out;
    std::vector<std::string> lines = read_lines(path);
    for (std::size_t i = 0; i < lines.size(); ++i) {
        const std::string& line = lines[i];
        if (line.empty()) continue;
        auto pos = line.rfind('\t');
        if (pos == std::string::npos || pos + 1 == line.size())
            throw std::runtime_error(path + ":" + std::to_string(i + 1) +
                                     ": expected text<TAB>label");
        out.push_back({line.substr(0, pos), line.substr(pos + 1)});
    }
    return out;
}

} // namespace

TaskDataset encode_raw(const RawSplits& raw, const TokenizerSettings& settings, int max_len,
                       std::string provenance) {
    std::set<std::string> label_set;
    for (const auto* split : {&raw.train, &raw.dev, &raw.test})
        for (const RawExample& e : *split) label_set.insert(e.label);
    if (label_set.size() < 2)
        throw std::runtime_error("task needs at least 2 distinct labels, found " +
                                 std::to_string(label_set.size()));

    TaskDataset out;
    out.label_names.assign(label_set.begin(), label_set.end());
    out.provenance = std::move(provenance);
    std::map<std::string, int, std::less<>> label_ids;
    for (std::size_t i = 0; i < out.label_names.size(); ++i)
        label_ids.emplace(out.label_names[i], static_cast<int>(i));

    std::vector<std::string> train_texts;
    train_texts.reserve(raw.train.size());
    for (const RawExample& e : raw.train) train_texts.push_back(e.text);
    TokenizedCorpus corpus = tokenize_corpus(train_texts, settings);
    out.vocab = std::move(corpus.vocab);

    auto encode_split = [&](const std::vector<RawExample>& src,
                            std::vector<LabeledExample>& dst) {
        dst.reserve(src.size());
        for (const RawExample& e : src) {
            std::vector<int> content;
            for (const std::string& w : split_lowercase(e.text)) content.push_back(out.vocab.id_of(w));
            dst.push_back({encode_sequence(content, max_len), label_ids.find(e.label)->second});
        }
    };
    encode_split(raw.train, out.train);
    encode_split(raw.dev, out.dev);
    encode_split(raw.test, out.test);
    return out;
}

TaskDataset load_task_tsv(const std::string& dir, const TokenizerSettings& settings, int max_len) {
    RawSplits raw;
    raw.train = parse_tsv(dir + "/train.tsv");
    raw.dev = parse_tsv(dir + "/dev.tsv");
    raw.test = parse_tsv(dir + "/test.tsv");
    return encode_raw(raw, settings, max_len, dir);
}

void save_task_tsv(const std::string& dir, const RawSplits& splits) {
    std::filesystem::create_directories(dir);
    auto write = [&](const char* name, const std::vector<RawExample>& rows) {
        std::string path = dir + "/" + name;
        std::ofstream outf(path);
        if (!outf) throw std::runtime_error("cannot write " + path);
        for (const RawExample& e : rows) outf << e.text << '\t' << e.label << '\n';
    };
    write("train.tsv", splits.train);
    write("dev.tsv", splits.dev);
    write("test.tsv", splits.test);
}

TaskDataset subsample_low_resource(const TaskDataset& dataset, int k, std::uint64_t seed,
                                   bool stratified) {
    int n = static_cast<int>(dataset.train.size());
    if (k <= 0) throw std::runtime_error("subsample size must be positive, got " + std::to_string(k));
    if (k > n)
        throw std::runtime_error("subsample size " + std::to_string(k) +
                                 " exceeds train split of " + std::to_string(n));
    Rng rng = Rng(seed).fork("sampling");
    std::vector<std::int64_t> chosen;
    if (!stratified) {
        chosen = rng.sample_without_replacement(n, k);
    } else {
        int classes = dataset.num_classes();
        std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(classes));
        for (std::size_t i = 0; i < dataset.train.size(); ++i)
            by_class[static_cast<std::size_t>(dataset.train[i].label)].push_back(i);
        std::vector<int> quota(static_cast<std::size_t>(classes));
        std::vector<double> frac(static_cast<std::size_t>(classes));
        int assigned = 0;
        for (int c = 0; c < classes; ++c) {
            double exact = static_cast<double>(k) * static_cast<double>(by_class[static_cast<std::size_t>(c)].size()) / n;
            quota[static_cast<std::size_t>(c)] = static_cast<int>(exact);
            frac[static_cast<std::size_t>(c)] = exact - quota[static_cast<std::size_t>(c)];
            assigned += quota[static_cast<std::size_t>(c)];
        }
        std::vector<int> order(static_cast<std::size_t>(classes));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return frac[static_cast<std::size_t>(a)] > frac[static_cast<std::size_t>(b)];
        });
        for (int i = 0; assigned < k; i = (i + 1) % classes) {
            auto c = static_cast<std::size_t>(order[static_cast<std::size_t>(i)]);
            if (quota[c] < static_cast<int>(by_class[c].size())) {
                ++quota[c];
                ++assigned;
            }
        }
        for (int c = 0; c < classes; ++c) {
            auto cu = static_cast<std::size_t>(c);
            auto idx = rng.sample_without_replacement(
                static_cast<std::int64_t>(by_class[cu].size()), quota[cu]);
            for (std::int64_t i : idx)
                chosen.push_back(static_cast<std::int64_t>(by_class[cu][static_cast<std::size_t>(i)]));
        }
    }
    std::sort(chosen.begin(), chosen.end());

    TaskDataset out = dataset;
    out.train.clear();
    out.train.reserve(chosen.size());
    for (std::int64_t i : chosen) out.train.push_back(dataset.train[static_cast<std::size_t>(i)]);
    out.provenance += " (train subsampled to " + std::to_string(k) + ")";
    return out;
}

MlmMasking mask_for_mlm(const model::TokenBatch& batch, Rng& rng, int vocab_size) {
    MlmMasking out;
    out.masked = batch;
    int content_tokens = vocab_size - Vocabulary::num_reserved;
    for (std::size_t i = 0; i < batch.ids.size(); ++i) {
        int id = batch.ids[i];
        if (id == Vocabulary::pad_id || id == Vocabulary::cls_id || id == Vocabulary::sep_id ||
            id == Vocabulary::mask_id)
            continue;
        if (rng.uniform() >= kMaskRate) continue;
        out.positions.push_back(static_cast<int>(i));
        out.targets.push_back(id);
        double u = rng.uniform();
        if (u < kMaskToMask) {
            out.masked.ids[i] = Vocabulary::mask_id;
        } else if (u < kMaskToRandom && content_tokens > 0) {
            out.masked.ids[i] =
                Vocabulary::num_reserved + static_cast<int>(rng.uniform_int(content_tokens));
        }
    }
    return out;
}

std::string keyword_token(int cls, int j) {
    return "k" + std::to_string(cls) + "w" + std::to_string(j);
}

std::string class_label(int cls) { return "class" + std::to_string(cls); }

RawSplits generate_synthetic_raw(const SyntheticTaskSpec& spec, const SplitSizes& sizes) {
    if (spec.num_classes < 2)
        throw std::runtime_error("synthetic task needs at least 2 classes");
    if (spec.keywords_per_class < 1)
        throw std::runtime_error("synthetic task needs at least 1 keyword per class");
    if (spec.keyword_rate <= 0.0 || spec.keyword_rate > 1.0)
        throw std::runtime_error("keyword_rate must lie in (0,1]");
    if (spec.min_len < 1 || spec.max_len < spec.min_len)
        throw std::runtime_error("sequence length range is invalid");
    if (spec.label_noise < 0.0 || spec.label_noise >= 1.0)
        throw std::runtime_error("label_noise must lie in [0,1)");
    if (sizes.train <= 0 || sizes.dev <= 0 || sizes.test <= 0)
        throw std::runtime_error("split sizes must be positive");
    int keywords = spec.num_classes * spec.keywords_per_class;
    int background = spec.vocab_size - Vocabulary::num_reserved - keywords;
    if (background < 1)
        throw std::runtime_error("vocab_size " + std::to_string(spec.vocab_size) +
                                 " cannot hold " + std::to_string(keywords) +
                                 " keywords plus reserved and background tokens");

    Rng rng = Rng(spec.seed).fork("synth");
    auto gen_example = [&]() {
        int len = spec.min_len + static_cast<int>(rng.uniform_int(spec.max_len - spec.min_len + 1));
        int cls = static_cast<int>(rng.uniform_int(spec.num_classes));
        std::vector<std::string> words(static_cast<std::size_t>(len));
        bool has_keyword = false;
        for (int p = 0; p < len; ++p) {
            if (rng.uniform() < spec.keyword_rate) {
                words[static_cast<std::size_t>(p)] =
                    keyword_token(cls, static_cast<int>(rng.uniform_int(spec.keywords_per_class)));
                has_keyword = true;
            } else {
                // Quadratic skew toward low ranks gives a natural-ish
                // frequency profile for the background vocabulary.
                double u = rng.uniform();
                int r = std::min(background - 1, static_cast<int>(u * u * background));
                words[static_cast<std::size_t>(p)] = "w" + std::to_string(r);
            }
        }
        if (!has_keyword) {
            int p = static_cast<int>(rng.uniform_int(len));
            words[static_cast<std::size_t>(p)] =
                keyword_token(cls, static_cast<int>(rng.uniform_int(spec.keywords_per_class)));
        }
        int label = cls;
        if (spec.label_noise > 0.0 && rng.uniform() < spec.label_noise)
            label = static_cast<int>(rng.uniform_int(spec.num_classes));
        std::string text;
        for (std::size_t i = 0; i < words.size(); ++i) {
            if (i) text.push_back(' ');
            text += words[i];
        }
        return RawExample{std::move(text), class_label(label)};
    };

    RawSplits out;
    out.train.reserve(static_cast<std::size_t>(sizes.train));
    out.dev.reserve(static_cast<std::size_t>(sizes.dev));
    out.test.reserve(static_cast<std::size_t>(sizes.test));
    for (int i = 0; i < sizes.train; ++i) out.train.push_back(gen_example());
    for (int i = 0; i < sizes.dev; ++i) out.dev.push_back(gen_example());
    for (int i = 0; i < sizes.test; ++i) out.test.push_back(gen_example());
    return out;
}

TaskDataset generate_synthetic_task(const SyntheticTaskSpec& spec, const SplitSizes& sizes,
                                    const TokenizerSettings& settings, int max_len) {
    RawSplits raw = generate_synthetic_raw(spec, sizes);
    std::string provenance = "synthetic classes=" + std::to_string(spec.num_classes) +
                             " vocab=" + std::to_string(spec.vocab_size) +
                             " noise=" + std::to_string(spec.label_noise) +
                             " seed=" + std::to_string(spec.seed);
    return encode_raw(raw, settings, max_len, std::move(provenance));
}

namespace {

model::TokenBatch pad_chunk(const std::vector<const std::vector<int>*>& rows) {
    model::TokenBatch batch;
    batch.batch = static_cast<int>(rows.size());
    std::size_t seq = 0;
    for (const auto* r : rows) seq = std::max(seq, r->size());
    batch.seq = static_cast<int>(seq);
    batch.ids.assign(rows.size() * seq, Vocabulary::pad_id);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::copy(rows[i]->begin(), rows[i]->end(), batch.ids.begin() + static_cast<std::ptrdiff_t>(i * seq));
    return batch;
}

} // namespace

LabeledBatches make_batches(const std::vector<LabeledExample>& examples, int batch_size,
                            Rng* shuffle) {
    if (batch_size <= 0) throw std::runtime_error("batch_size must be positive");
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) shuffle->shuffle(order);
    LabeledBatches out;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const std::vector<int>*> rows;
        std::vector<int> labels;
        rows.reserve(end - start);
        labels.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) {
            rows.push_back(&examples[order[i]].ids);
            labels.push_back(examples[order[i]].label);
        }
        out.batches.push_back(pad_chunk(rows));
        out.labels.push_back(std::move(labels));
    }
    return out;
}

std::vector<model::TokenBatch> make_sequence_batches(const std::vector<std::vector<int>>& encoded,
                                                     int batch_size, Rng* shuffle) {
    if (batch_size <= 0) throw std::runtime_error("batch_size must be positive");
    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);
    if (shuffle) shuffle->shuffle(order);
    std::vector<model::TokenBatch> out;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
        std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<const std::vector<int>*> rows;
        rows.reserve(end - start);
        for (std::size_t i = start; i < end; ++i) rows.push_back(&encoded[order[i]]);
        out.push_back(pad_chunk(rows));
    }
    return out;
}

} // namespace adapterlab::data
