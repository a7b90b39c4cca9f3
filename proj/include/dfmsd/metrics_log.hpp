#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace dfmsd {

struct EvalMetrics {
  double ap50 = 0;
  double mar = 0;
  bool operator==(const EvalMetrics &) const = default;
};

/**
 * One training step. loss_distill already contains beta * loss_me, so
 * loss_total == loss_gt + alpha * loss_distill.
 */
struct MetricsRecord {
  int step = 0;
  int stage_index = 0;
  double loss_total = 0;
  double loss_gt = 0;
  double loss_distill = 0;
  double loss_me = 0;
  double loss_recon = 0;
  double loss_sfa = 0;
  std::optional<EvalMetrics> eval;

  bool operator==(const MetricsRecord &) const = default;
};

/// `step=.. stage=.. loss_total=.. ...` with round-trippable doubles.
std::string format_record(const MetricsRecord &r);
MetricsRecord parse_record(const std::string &line);

/// Parses a flat `key=value key=value` line.
std::map<std::string, std::string> parse_key_values(const std::string &line);

bool is_event_line(const std::string &line);

/// Appends lines to a file, flushing after each so partial runs keep their log.
class MetricsLog {
public:
  MetricsLog() = default;
  explicit MetricsLog(const std::filesystem::path &path);

  void record(const MetricsRecord &r);
  void event(const std::string &name, const std::map<std::string, std::string> &fields);

  const std::vector<MetricsRecord> &records() const { return records_; }
  const std::vector<std::string> &lines() const { return lines_; }

private:
  void write(const std::string &line);

  std::ofstream out_;
  std::vector<MetricsRecord> records_;
  std::vector<std::string> lines_;
};

/// Records only (event lines skipped).
std::vector<MetricsRecord> read_metrics_log(const std::filesystem::path &path);

} // namespace dfmsd
