#include "dfmsd/commands.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>

namespace {

void configure_logging() {
  spdlog::set_level(spdlog::level::info);
  const char *level = std::getenv("DFMSD_LOG_LEVEL");
  if (!level)
    return;
  const std::string v = level;
  if (v == "debug")
    spdlog::set_level(spdlog::level::debug);
  else if (v == "info")
    spdlog::set_level(spdlog::level::info);
  else if (v == "warn")
    spdlog::set_level(spdlog::level::warn);
  else
    spdlog::warn("ignoring DFMSD_LOG_LEVEL={} (expected debug, info or warn)", v);
}

int report(const dfmsd::CommandResult &r) {
  if (r.exit_code == dfmsd::kExitOk) {
    if (!r.message.empty())
      std::cout << r.message << (r.message.back() == '\n' ? "" : "\n");
    for (const auto &a : r.artifacts)
      spdlog::debug("wrote {}", a.string());
  } else {
    std::cerr << "error: " << r.message << "\n";
  }
  return r.exit_code;
}

} // namespace

int main(int argc, char **argv) {
  configure_logging();
  CLI::App app{"Dual-masking stage-wise feature distillation for tiny detectors"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, data, image;
  std::optional<std::uint64_t> seed;
  std::optional<int> steps;
  int count = 8;

  auto add_common = [&](CLI::App *cmd, bool with_steps) {
    cmd->add_option("--config", config, "JSON config (defaults when omitted)");
    cmd->add_option("--out", out, "output directory")->required();
    cmd->add_option("--seed", seed, "overrides the config seed");
    if (with_steps)
      cmd->add_option("--steps", steps, "overrides every stage's step budget")->check(CLI::NonNegativeNumber);
  };

  auto *train = app.add_subcommand("train", "run the staged distillation schedule");
  add_common(train, true);

  auto *ablate = app.add_subcommand("ablate", "run the SAL/ME/SFA toggle matrix");
  add_common(ablate, true);

  auto *eval = app.add_subcommand("eval", "AP50/mAR of a checkpoint on a dataset");
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", data, "annotations.json or a directory holding one")->required();
  eval->add_option("--out", out, "directory for eval.json");

  auto *spectrum = app.add_subcommand("spectrum", "band energies of original/flipped/noised/cropped variants");
  spectrum->add_option("--image", image)->required();
  spectrum->add_option("--out", out)->required();
  spectrum->add_option("--seed", seed);

  auto *preview = app.add_subcommand("augment-preview", "dump enhanced inputs for the first samples");
  add_common(preview, false);
  preview->add_option("--count", count)->check(CLI::PositiveNumber);

  auto *exporter = app.add_subcommand("export-synth", "write the synthetic dataset in COCO layout");
  add_common(exporter, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError &e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : dfmsd::kExitInput;
  }

  const dfmsd::Overrides overrides{seed, steps};
  if (*train)
    return report(dfmsd::cmd_train(config, out, overrides));
  if (*ablate)
    return report(dfmsd::cmd_ablate(config, out, overrides));
  if (*eval)
    return report(dfmsd::cmd_eval(checkpoint, data, out));
  if (*spectrum)
    return report(dfmsd::cmd_spectrum(image, out, seed.value_or(0)));
  if (*preview)
    return report(dfmsd::cmd_augment_preview(config, out, count, overrides));
  return report(dfmsd::cmd_export_synth(config, out, overrides));
}
