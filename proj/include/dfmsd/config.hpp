#pragma once

#include "dfmsd/detector_spec.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmsd {

/// Invalid or unreadable configuration. `violations` lists every offending field.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(std::vector<std::string> violations);
  ConfigError(const std::string &single);

  const std::vector<std::string> &violations() const { return violations_; }

private:
  std::vector<std::string> violations_;
};

struct StageSpec {
  std::string teacher_id;
  bool enable_masking_enhancement = false;
  bool enable_semantic_alignment = true;
  int steps = 200;

  bool operator==(const StageSpec &) const = default;
};

struct OptimizerConfig {
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double learning_rate = 0.01;
  int batch_size = 8;
  double grad_clip = 10.0; ///< global L2 clip, 0 disables

  bool operator==(const OptimizerConfig &) const = default;
};

struct AugmentConfig {
  double score_floor = 0.3;
  double noise_prob = 0.5;
  double crop_min_keep = 0.5;
  double crop_max_keep = 0.9;
  double band_low = 0.125;
  double band_high = 0.5;

  bool operator==(const AugmentConfig &) const = default;
};

struct AlignmentConfig {
  std::vector<int> levels; ///< empty means every pyramid level
  bool per_channel = false;
  double weight = 1.0;

  bool operator==(const AlignmentConfig &) const = default;
};

struct TeacherSpec {
  std::string id;
  int strength_rank = 0;
  TinyDetectorSpec detector;
  std::string checkpoint; ///< loaded when it exists, otherwise written after pretraining
  int pretrain_steps = 1500;
  double pretrain_learning_rate = 0.02;

  bool operator==(const TeacherSpec &) const = default;
};

struct DataConfig {
  std::string source = "synthetic"; ///< "synthetic" or "coco"
  std::string coco_path;
  int num_images = 200;
  int val_images = 100;
  int image_size = 64;
  double size_mix = 0.5;

  bool operator==(const DataConfig &) const = default;
};

/**
 * Every hyperparameter of a distillation run.
 *
 * Defaults: lambda 0.5, alpha 5e-7, beta 2.5e-7, momentum 0.9, weight decay
 * 1e-4 and a two-stage weak->strong schedule. tau and rho are not fixed by
 * the method and default to 0.5.
 */
struct DistillConfig {
  double tau = 0.5;
  double rho = 0.5;
  double lambda_thresh = 0.5;
  double sigma = 0.1;
  double alpha = 5.0e-7;
  double beta = 2.5e-7;
  std::uint64_t seed = 0;

  OptimizerConfig optimizer;
  AugmentConfig augment;
  AlignmentConfig alignment;
  DataConfig data;
  TinyDetectorSpec student;
  std::vector<TeacherSpec> teachers;
  std::vector<StageSpec> stages;

  int num_stages() const { return static_cast<int>(stages.size()); }
  const TeacherSpec *find_teacher(const std::string &id) const;
  int total_steps() const;

  /// Empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;

  bool operator==(const DistillConfig &) const = default;
};

/// The fully defaulted configuration (what an empty document loads as).
DistillConfig default_config();

DistillConfig parse_config(const std::string &text);
DistillConfig load_config(const std::filesystem::path &path);
std::string serialize_config(const DistillConfig &cfg);
void save_config(const DistillConfig &cfg, const std::filesystem::path &path);

std::string serialize_detector_spec(const TinyDetectorSpec &spec);
TinyDetectorSpec parse_detector_spec(const std::string &text);

} // namespace dfmsd
