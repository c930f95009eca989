#pragma once

#include <string>
#include <vector>

#include "adapterlab/tuning.hpp"

#include "json.hpp"

namespace adapterlab::cli {

/// Numeric cells in metrics.csv carry 9 significant digits.
std::string fmt9(double x);

/// A run directory holds config.json (the resolved configuration, enough to
/// reproduce the run), record.json (outcome), metrics.csv, and optionally
/// checkpoints/.
struct RunDirectory {
    std::string path;

    explicit RunDirectory(std::string p);
    std::string file(const std::string& name) const;
    void write_text(const std::string& name, const std::string& content) const;
    void write_json(const std::string& name, const nlohmann::ordered_json& j) const;
    /// Rows are written as-is; numeric cells should already be fmt9-rendered.
    void write_metrics(const std::vector<std::string>& header,
                       const std::vector<std::vector<std::string>>& rows) const;
};

nlohmann::ordered_json record_to_json(const tuning::RunRecord& rec);

} // namespace adapterlab::cli
