#pragma once

#include <string>
#include <vector>

#include "mdseg/model.hpp"
#include "mdseg/phantom.hpp"
#include "mdseg/refine.hpp"

namespace mdseg {

/// Everything a run needs, serializable as one JSON document with sections
/// "data", "train", "refine" and "crops". The crop resolution follows train.working_resolution.
struct RunConfig {
  DatasetConfig data = DatasetConfig::default_config();
  TrainConfig train;
  RefineConfig refine;
  CropSamplingConfig crops;

  void validate() const;
};

/// Throws ConfigError naming the offending key for unknown keys, wrong types or invalid values.
RunConfig parse_run_config(const std::string& json_text);
std::string dump_run_config(const RunConfig& config);

RunConfig load_run_config(const std::string& path);
void save_run_config(const RunConfig& config, const std::string& path);

/// Applies "section.key=value" overrides; list elements are addressed by index
/// ("data.domains.2.n_train=20"). Values are parsed as JSON, falling back to a string.
RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& assignments);

}  // namespace mdseg
