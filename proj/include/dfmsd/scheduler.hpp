#pragma once

#include "dfmsd/config.hpp"
#include "dfmsd/dataset.hpp"
#include "dfmsd/detector.hpp"
#include "dfmsd/masking.hpp"
#include "dfmsd/metrics_log.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace dfmsd {

/// Frozen teachers keyed by id, each with a declared strength rank.
class TeacherRegistry {
public:
  void add(const TeacherSpec &spec, Detector model);

  bool contains(const std::string &id) const { return entries_.count(id) != 0; }
  const Detector &model(const std::string &id) const;
  Detector &model(const std::string &id);
  int strength_rank(const std::string &id) const;

  /// Throws ConfigError unless every stage teacher is registered and ranks
  /// strictly increase along the stage order.
  void validate_order(const std::vector<StageSpec> &stages) const;

  std::uint64_t checksum(const std::string &id);

private:
  struct Entry {
    TeacherSpec spec;
    std::unique_ptr<Detector> model;
  };
  std::map<std::string, Entry> entries_;
};

void save_model(Detector &model, const std::filesystem::path &path);
Detector load_model(const std::filesystem::path &path);

/// Trains a detector on the ground-truth loss only.
void train_detector(Detector &model, const Dataset &data, int steps, double learning_rate,
                    const OptimizerConfig &opt, std::uint64_t seed, MetricsLog *log = nullptr);

/// Loads the teacher from its checkpoint when present; otherwise pretrains it
/// and, when a checkpoint path is configured, saves it there.
Detector prepare_teacher(const TeacherSpec &spec, const Dataset &data, const DistillConfig &cfg,
                         const std::filesystem::path &checkpoint_root = {});

TeacherRegistry build_registry(const DistillConfig &cfg, const Dataset &data,
                               const std::filesystem::path &checkpoint_root = {});

/**
 * Everything needed to continue training bit-identically: student and
 * adapter parameters, momentum buffers, counters and the run seed. Stochastic
 * choices are derived from (seed, stage, step, image, level), so the seed is
 * the whole RNG state.
 */
struct TrainState {
  Detector student;
  MaskedReconstructor adapters;
  nn::MomentumBuffers momentum;
  int step = 0;        ///< optimizer steps completed over the whole run
  int stage_index = 0; ///< stage the counters below refer to
  int stage_step = 0;  ///< steps completed within that stage
  bool stage_open = false;
  int stages_completed = 0;
  std::uint64_t seed = 0;

  explicit TrainState(Detector s, std::uint64_t run_seed) : student(std::move(s)), seed(run_seed) {}

  nn::ParameterList trainable();
};

TrainState initial_state(const DistillConfig &cfg);

void save_train_state(TrainState &state, const std::filesystem::path &path);
TrainState load_train_state(const std::filesystem::path &path);

struct RunOptions {
  /// Stop after this many optimizer steps in this call (negative: no limit).
  int max_steps = -1;
  /// Evaluated at the end of each stage and attached to its last record.
  const Dataset *validation = nullptr;
};

/**
 * Runs (or resumes) stage `stage_index` of `cfg.stages`.
 *
 * Each step: frozen teacher forward, dual attention, masks, masked
 * reconstruction, optional masking enhancement and semantic alignment, then
 * one SGD step on total = gt + alpha * distill. alpha == 0 skips the
 * distillation branch entirely. Momentum buffers and adapters are reset when
 * a stage starts.
 */
void run_stage(TrainState &state, const DistillConfig &cfg, int stage_index, const Dataset &data,
               TeacherRegistry &registry, MetricsLog &log, const RunOptions &options = {});

struct ScheduleResult {
  std::vector<std::uint64_t> stage_start_checksums;
  std::vector<std::uint64_t> stage_end_checksums;
};

/// Folds run_stage over every configured stage, handing the student forward.
ScheduleResult run_schedule(TrainState &state, const DistillConfig &cfg, const Dataset &data,
                            TeacherRegistry &registry, MetricsLog &log, const RunOptions &options = {});

/// AP/AR of a model on a dataset.
EvalMetrics evaluate_model(const Detector &model, const Dataset &data);

} // namespace dfmsd
