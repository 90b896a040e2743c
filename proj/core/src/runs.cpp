#include "mdm/runs.hpp"

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mdm/errors.hpp"
#include "mdm/version.hpp"

namespace mdm::runs {

namespace fs = std::filesystem;

std::filesystem::path output_root() {
  if (const char* env = std::getenv("MDM_OUTPUT_ROOT");
      env != nullptr && *env != '\0') {
    return fs::path(env);
  }
  return fs::path("runs");
}

std::filesystem::path fresh_run_dir(const std::filesystem::path& root,
                                    const std::string& id) {
  if (id.empty()) throw ConfigError("run id must not be empty");
  if (id.find('/') != std::string::npos ||
      id.find('\\') != std::string::npos) {
    throw ConfigError("run id must not contain path separators: " + id);
  }
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) {
    throw IoError("cannot create output root " + root.string() + ": " +
                  ec.message());
  }
  fs::path dir = root / id;
  int suffix = 0;
  while (fs::exists(dir) && !fs::is_empty(dir)) {
    ++suffix;
    dir = root / (id + "-" + std::to_string(suffix));
    if (suffix > 10000) {
      throw IoError("cannot find a free run directory under " +
                    root.string());
    }
  }
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("cannot create run directory " + dir.string() + ": " +
                  ec.message());
  }
  return dir;
}

void write_run_stamp(const std::filesystem::path& run_dir,
                     const nlohmann::json& resolved_config) {
  {
    std::ofstream out(run_dir / "config.json", std::ios::trunc);
    if (!out) {
      throw IoError("cannot write " + (run_dir / "config.json").string());
    }
    out << resolved_config.dump(2) << "\n";
  }
  nlohmann::json ver{{"version", kVersion}, {"git_revision", kGitRevision}};
  std::ofstream out(run_dir / "version.json", std::ios::trunc);
  if (!out) {
    throw IoError("cannot write " + (run_dir / "version.json").string());
  }
  out << ver.dump(2) << "\n";
}

namespace {

void check_field(const std::string& value, const char* what) {
  if (value.empty()) {
    throw DataError(std::string("metrics CSV field '") + what +
                    "' must not be empty");
  }
  if (value.find_first_of(",\"\n\r") != std::string::npos) {
    throw DataError(std::string("metrics CSV field '") + what +
                    "' contains a forbidden character: " + value);
  }
}

constexpr const char* kHeader = "run_id,seed,dataset,split,metric,value";

}  // namespace

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricRow>& rows, bool append) {
  const bool fresh = !append || !fs::exists(path);
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, fresh ? std::ios::trunc : std::ios::app);
  if (!out) throw IoError("cannot open metrics CSV " + path.string());
  if (fresh) out << kHeader << "\n";
  out << std::setprecision(17);
  for (const MetricRow& r : rows) {
    check_field(r.run_id, "run_id");
    check_field(r.dataset, "dataset");
    check_field(r.split, "split");
    check_field(r.metric, "metric");
    out << r.run_id << "," << r.seed << "," << r.dataset << "," << r.split
        << "," << r.metric << "," << r.value << "\n";
  }
  if (!out) throw IoError("failed writing metrics CSV " + path.string());
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics CSV " + path.string());
  std::string line;
  if (!std::getline(in, line)) {
    throw DataError("metrics CSV " + path.string() + " is empty");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kHeader) {
    throw DataError("metrics CSV " + path.string() +
                    " has unexpected header: " + line);
  }
  std::vector<MetricRow> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) {
      throw DataError("metrics CSV " + path.string() + " line " +
                      std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " fields, want 6");
    }
    MetricRow r;
    r.run_id = cells[0];
    try {
      r.seed = std::stoull(cells[1]);
      r.value = std::stod(cells[5]);
    } catch (const std::exception&) {
      throw DataError("metrics CSV " + path.string() + " line " +
                      std::to_string(line_no) + " has a malformed number");
    }
    r.dataset = cells[2];
    r.split = cells[3];
    r.metric = cells[4];
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace mdm::runs
