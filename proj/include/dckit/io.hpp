#pragma once

#include <string>
#include <vector>

#include "dckit/condense.hpp"
#include "dckit/data.hpp"
#include "dckit/eval.hpp"
#include "dckit/nn.hpp"

namespace dckit::io {

// Condensed-set artifact: {stem}.json manifest (classes, ipc, shape, labels,
// seed, config hash, full resolved config) + {stem}.bin little-endian float32
// pixel buffer.
void save_condensed(const cond::SyntheticSet& set, const cond::CondenseConfig& cfg,
                    const std::string& stem);
struct LoadedCondensed {
  cond::SyntheticSet set;
  cond::CondenseConfig cfg;
  std::string config_hash;
};
LoadedCondensed load_condensed(const std::string& stem);

std::string config_hash(const cond::CondenseConfig& cfg);
std::string condense_config_json(const cond::CondenseConfig& cfg);
cond::CondenseConfig condense_config_from_json(const std::string& text);

void write_runlog_csv(const cond::RunLog& log, const std::string& path);
void write_gram_series(const std::vector<std::pair<int64_t, Tensor>>& snapshots,
                       const std::string& stem);

// Model checkpoint: flat float32 buffer + JSON shape manifest.
void save_model(const nn::Model& model, const std::string& stem);
nn::Model load_model(const std::string& stem);

// Dataset spec strings: "idx:<dir>", "rawf32:<manifest.json>",
// "builtin:finegrained2[:variant[:seed]]".
data::DatasetContainer load_dataset(const std::string& spec);

// Small helpers shared by the CLI and tests.
void write_f32(const std::string& path, const std::vector<double>& values);
void write_i32(const std::string& path, const std::vector<int>& values);
void write_text(const std::string& path, const std::string& text);
std::string read_text(const std::string& path);

}  // namespace dckit::io
