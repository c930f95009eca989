#include "adapterlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace adapterlab::checkpoint {

namespace {

using json = nlohmann::ordered_json;

constexpr int kFormatVersion = 1;

void put_f64_le(std::string& out, double x) {
    auto bits = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double get_f64_le(const std::string& blob, std::size_t offset) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[offset + i])) << (8 * i);
    return std::bit_cast<double>(bits);
}

json model_to_json(const model::EncoderModel& m) {
    const auto& c = m.config();
    json j;
    j["num_layers"] = c.num_layers;
    j["model_dim"] = c.model_dim;
    j["num_heads"] = c.num_heads;
    j["ffn_dim"] = c.ffn_dim;
    j["vocab_size"] = c.vocab_size;
    j["max_seq_len"] = c.max_seq_len;
    j["dropout_rate"] = c.dropout_rate;
    j["num_classes"] = m.num_classes();
    j["seed"] = m.seed();
    if (m.adapter_config()) {
        const auto& a = *m.adapter_config();
        j["adapter"] = {{"hidden_size", a.hidden_size},
                        {"insert_after_attention", a.insert_after_attention},
                        {"insert_after_ffn", a.insert_after_ffn}};
    } else {
        j["adapter"] = nullptr;
    }
    return j;
}

} // namespace

void save_checkpoint(const std::string& dir, const model::EncoderModel& m,
                     const data::Vocabulary& vocab, const std::vector<std::string>& label_names,
                     const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);

    const auto& params = m.parameters();
    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["model"] = model_to_json(m);
    manifest["vocab"] = vocab.tokens;
    manifest["label_names"] = label_names;
    manifest["policy"] = meta.policy;
    manifest["step"] = meta.step;

    std::int64_t total_bytes = 0;
    for (const auto& p : params) total_bytes += p.value.size() * 8;

    json table = json::array();
    std::int64_t offset = 0;
    for (const auto& p : params) {
        std::int64_t bytes = p.value.size() * 8;
        table.push_back({{"name", p.name},
                         {"shape", p.value.shape()},
                         {"frozen", p.frozen},
                         {"value_offset", offset},
                         {"initial_offset", total_bytes + offset},
                         {"byte_length", bytes}});
        offset += bytes;
    }
    manifest["parameters"] = std::move(table);

    std::string blob;
    blob.reserve(static_cast<std::size_t>(2 * total_bytes));
    for (const auto& p : params)
        for (std::int64_t k = 0; k < p.value.size(); ++k) put_f64_le(blob, p.value[k]);
    for (const auto& p : params)
        for (std::int64_t k = 0; k < p.initial.size(); ++k) put_f64_le(blob, p.initial[k]);

    std::filesystem::path base(dir);
    {
        std::ofstream mf(base / "manifest.json");
        if (!mf) throw std::runtime_error("cannot write " + (base / "manifest.json").string());
        mf << manifest.dump(2) << '\n';
    }
    {
        std::ofstream bf(base / "params.bin", std::ios::binary);
        if (!bf) throw std::runtime_error("cannot write " + (base / "params.bin").string());
        bf.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        if (!bf) throw std::runtime_error("failed writing " + (base / "params.bin").string());
    }
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
    std::filesystem::path base(dir);
    std::ifstream mf(base / "manifest.json");
    if (!mf) throw std::runtime_error("cannot open " + (base / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::exception& e) {
        throw std::runtime_error((base / "manifest.json").string() + ": " + e.what());
    }

    try {
        int version = manifest.at("format_version").get<int>();
        if (version != kFormatVersion)
            throw std::runtime_error("unsupported checkpoint format_version " +
                                     std::to_string(version));

        const json& mj = manifest.at("model");
        model::TransformerConfig cfg;
        cfg.num_layers = mj.at("num_layers").get<int>();
        cfg.model_dim = mj.at("model_dim").get<int>();
        cfg.num_heads = mj.at("num_heads").get<int>();
        cfg.ffn_dim = mj.at("ffn_dim").get<int>();
        cfg.vocab_size = mj.at("vocab_size").get<int>();
        cfg.max_seq_len = mj.at("max_seq_len").get<int>();
        cfg.dropout_rate = mj.at("dropout_rate").get<double>();
        std::optional<model::AdapterConfig> adapter;
        if (!mj.at("adapter").is_null()) {
            model::AdapterConfig a;
            a.hidden_size = mj.at("adapter").at("hidden_size").get<int>();
            a.insert_after_attention = mj.at("adapter").at("insert_after_attention").get<bool>();
            a.insert_after_ffn = mj.at("adapter").at("insert_after_ffn").get<bool>();
            adapter = a;
        }
        int num_classes = mj.at("num_classes").get<int>();
        auto seed = mj.at("seed").get<std::uint64_t>();

        LoadedCheckpoint out{model::EncoderModel(cfg, adapter, num_classes, seed),
                             data::Vocabulary::from_tokens(
                                 manifest.at("vocab").get<std::vector<std::string>>()),
                             manifest.at("label_names").get<std::vector<std::string>>(),
                             {manifest.at("policy").get<std::string>(),
                              manifest.at("step").get<std::int64_t>()}};

        auto& params = out.model.parameters();
        const json& table = manifest.at("parameters");
        if (table.size() != params.size())
            throw std::runtime_error("checkpoint lists " + std::to_string(table.size()) +
                                     " parameters but the model has " +
                                     std::to_string(params.size()));

        std::ifstream bf(base / "params.bin", std::ios::binary);
        if (!bf) throw std::runtime_error("cannot open " + (base / "params.bin").string());
        std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

        std::int64_t total_bytes = 0;
        for (const auto& p : params) total_bytes += p.value.size() * 8;
        if (static_cast<std::int64_t>(blob.size()) != 2 * total_bytes)
            throw std::runtime_error((base / "params.bin").string() + " holds " +
                                     std::to_string(blob.size()) + " bytes, expected " +
                                     std::to_string(2 * total_bytes));

        for (std::size_t i = 0; i < params.size(); ++i) {
            const json& row = table[i];
            core::Parameter& p = params[i];
            auto name = row.at("name").get<std::string>();
            if (name != p.name)
                throw std::runtime_error("checkpoint parameter " + name +
                                         " does not match model parameter " + p.name);
            if (row.at("shape").get<std::vector<int>>() != p.value.shape())
                throw std::runtime_error("checkpoint shape mismatch for " + p.name);
            auto value_off = row.at("value_offset").get<std::int64_t>();
            auto initial_off = row.at("initial_offset").get<std::int64_t>();
            auto bytes = row.at("byte_length").get<std::int64_t>();
            if (bytes != p.value.size() * 8 || value_off < 0 || initial_off < 0 ||
                value_off + bytes > total_bytes || initial_off + bytes > 2 * total_bytes)
                throw std::runtime_error("checkpoint offsets for " + p.name +
                                         " fall outside params.bin");
            for (std::int64_t k = 0; k < p.value.size(); ++k) {
                p.value[k] = get_f64_le(blob, static_cast<std::size_t>(value_off + 8 * k));
                p.initial[k] = get_f64_le(blob, static_cast<std::size_t>(initial_off + 8 * k));
            }
            p.frozen = row.at("frozen").get<bool>();
        }
        return out;
    } catch (const json::exception& e) {
        throw std::runtime_error((base / "manifest.json").string() + ": " + e.what());
    }
}

} // namespace adapterlab::checkpoint
