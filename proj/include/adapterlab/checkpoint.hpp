#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "adapterlab/data.hpp"
#include "adapterlab/model.hpp"

namespace adapterlab::checkpoint {

/// On disk a checkpoint is a directory holding manifest.json (model config,
/// vocabulary, label names, parameter table) and params.bin (all parameter
/// values followed by all initial values, little-endian binary64).
struct CheckpointMeta {
    std::string policy; // tuning policy in effect when saved, "" if none
    std::int64_t step = 0;
};

void save_checkpoint(const std::string& dir, const model::EncoderModel& m,
                     const data::Vocabulary& vocab, const std::vector<std::string>& label_names,
                     const CheckpointMeta& meta = {});

struct LoadedCheckpoint {
    model::EncoderModel model;
    data::Vocabulary vocab;
    std::vector<std::string> label_names;
    CheckpointMeta meta;
};

/// Rebuilds the model from the manifest and restores every parameter value,
/// initial value, and frozen flag bit for bit.
LoadedCheckpoint load_checkpoint(const std::string& dir);

} // namespace adapterlab::checkpoint
