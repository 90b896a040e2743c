#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace mdm::runs {

// Root directory for run outputs: $MDM_OUTPUT_ROOT when set, otherwise
// ./runs under the current working directory.
std::filesystem::path output_root();

// Creates root/id, appending "-1", "-2", ... if that directory already
// exists and is non-empty. Returns the directory actually created.
std::filesystem::path fresh_run_dir(const std::filesystem::path& root,
                                    const std::string& id);

// Freezes the fully resolved configuration (config.json) and the library
// version + git revision (version.json) into the run directory, so every
// run records exactly what produced it.
void write_run_stamp(const std::filesystem::path& run_dir,
                     const nlohmann::json& resolved_config);

// One row of the metrics table. String fields must not contain commas,
// quotes or newlines; the writer enforces this so the CSV stays trivially
// machine-readable.
struct MetricRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string dataset;
  std::string split;
  std::string metric;
  double value = 0.0;
};

// Writes (or appends to) a CSV with header
//   run_id,seed,dataset,split,metric,value
// Values are printed with enough digits to round-trip doubles exactly.
void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricRow>& rows,
                       bool append = false);

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

}  // namespace mdm::runs
