#include "adapterlab/run_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace adapterlab::cli {

std::string fmt9(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

RunDirectory::RunDirectory(std::string p) : path(std::move(p)) {
    std::filesystem::create_directories(path);
}

std::string RunDirectory::file(const std::string& name) const {
    return (std::filesystem::path(path) / name).string();
}

void RunDirectory::write_text(const std::string& name, const std::string& content) const {
    std::ofstream out(file(name));
    if (!out) throw std::runtime_error("cannot write " + file(name));
    out << content;
    if (!out) throw std::runtime_error("failed writing " + file(name));
}

void RunDirectory::write_json(const std::string& name, const nlohmann::ordered_json& j) const {
    write_text(name, j.dump(2) + "\n");
}

void RunDirectory::write_metrics(const std::vector<std::string>& header,
                                 const std::vector<std::vector<std::string>>& rows) const {
    std::string out;
    for (std::size_t i = 0; i < header.size(); ++i) {
        if (i) out += ',';
        out += header[i];
    }
    out += '\n';
    for (const auto& row : rows) {
        if (row.size() != header.size())
            throw std::runtime_error("metrics row width does not match the header");
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out += ',';
            out += row[i];
        }
        out += '\n';
    }
    write_text("metrics.csv", out);
}

nlohmann::ordered_json record_to_json(const tuning::RunRecord& rec) {
    nlohmann::ordered_json j;
    j["config_digest"] = rec.config_digest;
    j["seed"] = rec.seed;
    j["metric"] = rec.metric;
    nlohmann::ordered_json evals = nlohmann::ordered_json::array();
    for (const auto& e : rec.evaluations)
        evals.push_back({{"step", e.step}, {"train_loss", e.train_loss}, {"dev_metric", e.dev_metric}});
    j["evaluations"] = std::move(evals);
    j["selected_step"] = rec.selected_step;
    j["selected_epoch"] = rec.selected_epoch;
    j["final_metric"] = rec.final_metric;
    j["warnings"] = rec.warnings;
    // Wall time stays out of record.json so identical (config, seed) reruns
    // produce identical files.
    return j;
}

} // namespace adapterlab::cli
