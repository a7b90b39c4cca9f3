#pragma once

#include "dfmsd/config.hpp"
#include "dfmsd/dataset.hpp"
#include "dfmsd/metrics_log.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dfmsd {

/// Exit codes: 0 success, 2 input or config error, 3 numeric failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

struct CommandResult {
  int exit_code = kExitOk;
  std::vector<std::filesystem::path> artifacts;
  std::string message; ///< error text, or the printed summary on success
};

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<int> steps; ///< replaces every stage's step budget
};

/// Loads (or defaults, for an empty path) the config and applies overrides.
DistillConfig resolve_config(const std::filesystem::path &config_path, const Overrides &overrides);

/// Training and held-out data described by the config.
Dataset training_data(const DistillConfig &cfg);
Dataset validation_data(const DistillConfig &cfg);

/// One row of the SAL / ME / SFA toggle matrix.
struct AblationRow {
  bool sal = false;
  bool me = false;
  bool sfa = false;
  std::string tag() const;
};

/// The seven non-empty toggle combinations, in table order.
std::vector<AblationRow> ablation_rows();

/**
 * Derives a row's run config: SAL keeps the full teacher chain (otherwise the
 * last teacher alone gets the whole step budget), ME is enabled on the final
 * stage, SFA on every stage.
 */
DistillConfig ablation_config(const DistillConfig &base, const AblationRow &row);

/// Plain student training: alpha 0 over the same step budget.
DistillConfig baseline_config(const DistillConfig &base);

/// Loss curve (total loss, log scale) with stage boundaries, as a PPM image.
Image render_loss_curve(const std::vector<MetricsRecord> &records, int width = 480, int height = 240);

CommandResult cmd_train(const std::filesystem::path &config_path, const std::filesystem::path &out_dir,
                        const Overrides &overrides = {});
CommandResult cmd_eval(const std::filesystem::path &checkpoint, const std::filesystem::path &data_path,
                       const std::filesystem::path &out_dir = {});
CommandResult cmd_spectrum(const std::filesystem::path &image_path, const std::filesystem::path &out_dir,
                           std::uint64_t seed = 0);
CommandResult cmd_augment_preview(const std::filesystem::path &config_path, const std::filesystem::path &out_dir,
                                  int count, const Overrides &overrides = {});
CommandResult cmd_ablate(const std::filesystem::path &config_path, const std::filesystem::path &out_dir,
                         const Overrides &overrides = {});
CommandResult cmd_export_synth(const std::filesystem::path &config_path, const std::filesystem::path &out_dir,
                               const Overrides &overrides = {});

} // namespace dfmsd
