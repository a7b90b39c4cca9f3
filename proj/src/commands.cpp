#include "dfmsd/commands.hpp"

#include "dfmsd/checkpoint.hpp"
#include "dfmsd/freq_augment.hpp"
#include "dfmsd/scheduler.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>

namespace dfmsd {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kTrainDataStream = 0x747261ULL;
constexpr std::uint64_t kValDataStream = 0x76616cULL;

CommandResult guarded(const std::function<void(CommandResult &)> &body) {
  CommandResult result;
  try {
    body(result);
  } catch (const NumericError &e) {
    result.exit_code = kExitNumeric;
    result.message = e.what();
  } catch (const std::exception &e) {
    result.exit_code = kExitInput;
    result.message = e.what();
  }
  if (result.exit_code != kExitOk)
    spdlog::error("{}", result.message);
  return result;
}

void write_text(const fs::path &path, const std::string &text, CommandResult &result) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << text;
  result.artifacts.push_back(path);
}

void set_pixel(Image &img, int x, int y, double r, double g, double b) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height)
    return;
  img.at(0, y, x) = r;
  img.at(1, y, x) = g;
  img.at(2, y, x) = b;
}

void draw_line(Image &img, int x0, int y0, int x1, int y1, double r, double g, double b) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  while (true) {
    set_pixel(img, x0, y0, r, g, b);
    if (x0 == x1 && y0 == y1)
      break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

struct RunOutcome {
  EvalMetrics final_eval;
  double final_loss = 0;
};

RunOutcome run_config(const DistillConfig &cfg, const Dataset &train, const Dataset &val,
                      TeacherRegistry &registry, const fs::path &log_path) {
  MetricsLog log(log_path);
  TrainState state = initial_state(cfg);
  RunOptions opts;
  opts.validation = &val;
  run_schedule(state, cfg, train, registry, log, opts);
  RunOutcome out;
  out.final_eval = evaluate_model(state.student, val);
  if (!log.records().empty())
    out.final_loss = log.records().back().loss_total;
  return out;
}

} // namespace

DistillConfig resolve_config(const fs::path &config_path, const Overrides &overrides) {
  DistillConfig cfg = config_path.empty() ? default_config() : load_config(config_path);
  if (overrides.seed)
    cfg.seed = *overrides.seed;
  if (overrides.steps) {
    for (auto &s : cfg.stages)
      s.steps = *overrides.steps;
  }
  cfg.validate();
  return cfg;
}

Dataset training_data(const DistillConfig &cfg) {
  if (cfg.data.source == "coco")
    return load_dataset(cfg.data.coco_path, cfg.data.image_size);
  return synth_dataset(cfg.data.num_images, cfg.data.image_size, cfg.data.size_mix,
                       derive_seed(cfg.seed, {kTrainDataStream}));
}

Dataset validation_data(const DistillConfig &cfg) {
  if (cfg.data.source == "coco")
    return load_dataset(cfg.data.coco_path, cfg.data.image_size);
  return synth_dataset(cfg.data.val_images, cfg.data.image_size, cfg.data.size_mix,
                       derive_seed(cfg.seed, {kValDataStream}));
}

std::string AblationRow::tag() const {
  std::string t;
  for (auto [on, name] : {std::pair{sal, "sal"}, std::pair{me, "me"}, std::pair{sfa, "sfa"}})
    if (on)
      t += t.empty() ? name : std::string("+") + name;
  return t.empty() ? "none" : t;
}

std::vector<AblationRow> ablation_rows() {
  return {{true, false, false}, {false, true, false}, {false, false, true}, {true, true, false},
          {true, false, true},  {false, true, true},  {true, true, true}};
}

DistillConfig ablation_config(const DistillConfig &base, const AblationRow &row) {
  DistillConfig cfg = base;
  if (!row.sal) {
    StageSpec last = base.stages.back();
    last.steps = base.total_steps();
    cfg.stages = {last};
  }
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    cfg.stages[i].enable_masking_enhancement = row.me && i + 1 == cfg.stages.size();
    cfg.stages[i].enable_semantic_alignment = row.sfa;
  }
  return cfg;
}

DistillConfig baseline_config(const DistillConfig &base) {
  DistillConfig cfg = ablation_config(base, AblationRow{});
  cfg.alpha = 0.0;
  return cfg;
}

Image render_loss_curve(const std::vector<MetricsRecord> &records, int width, int height) {
  Image img(height, width);
  img.data.setOnes();
  const int margin = 10;
  draw_line(img, margin, height - margin, width - margin, height - margin, 0.6, 0.6, 0.6);
  draw_line(img, margin, margin, margin, height - margin, 0.6, 0.6, 0.6);
  if (records.empty())
    return img;

  std::vector<double> ys;
  for (const auto &r : records)
    ys.push_back(std::log10(std::max(r.loss_total, 1e-12)));
  const auto [lo_it, hi_it] = std::minmax_element(ys.begin(), ys.end());
  const double lo = *lo_it, span = std::max(*hi_it - lo, 1e-9);
  const double n = static_cast<double>(std::max<std::size_t>(records.size() - 1, 1));
  auto px = [&](std::size_t i) { return margin + static_cast<int>(std::lround(i / n * (width - 2 * margin))); };
  auto py = [&](double v) {
    return height - margin - static_cast<int>(std::lround((v - lo) / span * (height - 2 * margin)));
  };
  for (std::size_t i = 1; i < records.size(); ++i)
    if (records[i].stage_index != records[i - 1].stage_index)
      draw_line(img, px(i), margin, px(i), height - margin, 0.8, 0.3, 0.3);
  for (std::size_t i = 1; i < records.size(); ++i)
    draw_line(img, px(i - 1), py(ys[i - 1]), px(i), py(ys[i]), 0.1, 0.2, 0.7);
  if (records.size() == 1)
    set_pixel(img, px(0), py(ys[0]), 0.1, 0.2, 0.7);
  return img;
}

CommandResult cmd_train(const fs::path &config_path, const fs::path &out_dir, const Overrides &overrides) {
  return guarded([&](CommandResult &result) {
    const DistillConfig cfg = resolve_config(config_path, overrides);
    fs::create_directories(out_dir);
    write_text(out_dir / "config.json", serialize_config(cfg), result);

    const Dataset train = training_data(cfg);
    const Dataset val = validation_data(cfg);
    if (train.empty())
      throw std::invalid_argument("training data has no samples");
    TeacherRegistry registry = build_registry(cfg, train, out_dir);

    const fs::path log_path = out_dir / "metrics.log";
    result.artifacts.push_back(log_path);
    MetricsLog log(log_path);
    TrainState state = initial_state(cfg);
    RunOptions opts;
    opts.validation = val.empty() ? nullptr : &val;
    run_schedule(state, cfg, train, registry, log, opts);

    save_model(state.student, out_dir / "student.ckpt");
    result.artifacts.push_back(out_dir / "student.ckpt");
    save_train_state(state, out_dir / "train_state.ckpt");
    result.artifacts.push_back(out_dir / "train_state.ckpt");
    write_ppm(render_loss_curve(log.records()), out_dir / "loss_curve.ppm");
    result.artifacts.push_back(out_dir / "loss_curve.ppm");
    for (const auto &t : cfg.teachers)
      if (!t.checkpoint.empty() && fs::exists(out_dir / t.checkpoint))
        result.artifacts.push_back(out_dir / t.checkpoint);

    if (!log.records().empty()) {
      const auto &last = log.records().back();
      result.message = fmt::format("steps={} loss_total={:.6g}", last.step, last.loss_total);
      if (last.eval)
        result.message += fmt::format(" ap50={:.4f} mar={:.4f}", last.eval->ap50, last.eval->mar);
    } else {
      result.message = "steps=0";
    }
  });
}

CommandResult cmd_eval(const fs::path &checkpoint, const fs::path &data_path, const fs::path &out_dir) {
  return guarded([&](CommandResult &result) {
    const CheckpointBlob blob = read_checkpoint(checkpoint);
    std::optional<Detector> model;
    if (blob.kind == CheckpointKind::train_state)
      model.emplace(std::move(load_train_state(checkpoint).student));
    else
      model.emplace(load_model(checkpoint));
    const Dataset data = load_dataset(data_path, model->spec().image_size);
    if (data.empty())
      throw std::invalid_argument("no samples in " + data_path.string());
    const EvalMetrics m = evaluate_model(*model, data);
    const json doc{{"ap50", m.ap50}, {"mar", m.mar}, {"samples", data.size()}};
    result.message = doc.dump();
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      write_text(out_dir / "eval.json", doc.dump(2) + "\n", result);
    }
  });
}

CommandResult cmd_spectrum(const fs::path &image_path, const fs::path &out_dir, std::uint64_t seed) {
  return guarded([&](CommandResult &result) {
    const Image image = read_image(image_path);
    const DistillConfig cfg = default_config();
    const BandEdges edges{cfg.augment.band_low, cfg.augment.band_high};
    const std::vector<std::pair<std::string, Image>> variants = {
        {"original", image},
        {"flipped", flip_horizontal(image)},
        {"noised", apply_gaussian_noise(image, cfg.sigma, 1.0, derive_seed(seed, {1}))},
        {"cropped", apply_random_crop(image, cfg.augment.crop_min_keep, cfg.augment.crop_max_keep,
                                      derive_seed(seed, {2}))}};
    fs::create_directories(out_dir);
    std::string table = "variant\tlow\tmid\thigh\ttotal_energy\n";
    for (const auto &[name, img] : variants) {
      const Spectrum s = dft_spectrum(img.gray(), edges);
      table += fmt::format("{}\t{:.9f}\t{:.9f}\t{:.9f}\t{:.9g}\n", name, s.fraction("low"), s.fraction("mid"),
                           s.fraction("high"), s.total_energy);
      const fs::path p = out_dir / ("spectrum_" + name + ".pgm");
      write_pgm(log_magnitude_image(s), p);
      result.artifacts.push_back(p);
    }
    write_text(out_dir / "bands.tsv", table, result);
    result.message = table;
  });
}

CommandResult cmd_augment_preview(const fs::path &config_path, const fs::path &out_dir, int count,
                                  const Overrides &overrides) {
  return guarded([&](CommandResult &result) {
    const DistillConfig cfg = resolve_config(config_path, overrides);
    const Dataset data = training_data(cfg);
    if (data.empty())
      throw std::invalid_argument("no samples to preview");
    fs::create_directories(out_dir);
    std::string table = "index\tarea\tbranch\n";
    const int n = std::min<int>(count, static_cast<int>(data.size()));
    for (int i = 0; i < n; ++i) {
      const auto &sample = data[i];
      const EnhancedInput enh = enhance_input(sample.image, sample.ground_truth, cfg,
                                              derive_seed(cfg.seed, {static_cast<std::uint64_t>(i)}));
      const fs::path orig = out_dir / fmt::format("sample_{:03d}_input.ppm", i);
      const fs::path aug = out_dir / fmt::format("sample_{:03d}_{}.ppm", i, to_string(enh.decision.branch));
      write_ppm(sample.image, orig);
      write_ppm(enh.image, aug);
      result.artifacts.push_back(orig);
      result.artifacts.push_back(aug);
      table += fmt::format("{}\t{:.6f}\t{}\n", i, enh.decision.area_fraction, to_string(enh.decision.branch));
    }
    write_text(out_dir / "preview.tsv", table, result);
    result.message = table;
  });
}

CommandResult cmd_ablate(const fs::path &config_path, const fs::path &out_dir, const Overrides &overrides) {
  return guarded([&](CommandResult &result) {
    const DistillConfig cfg = resolve_config(config_path, overrides);
    fs::create_directories(out_dir);
    const Dataset train = training_data(cfg);
    const Dataset val = validation_data(cfg);
    if (train.empty() || val.empty())
      throw std::invalid_argument("ablation needs training and validation samples");
    TeacherRegistry registry = build_registry(cfg, train, out_dir);

    std::string table = "row\tsal\tme\tsfa\tap50\tmar\tfinal_loss\n";
    const auto rows = ablation_rows();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const AblationRow &row = rows[i];
      spdlog::info("ablation row {} ({})", i + 1, row.tag());
      const fs::path log_path = out_dir / fmt::format("row{}_{}.log", i + 1, row.tag());
      const RunOutcome o = run_config(ablation_config(cfg, row), train, val, registry, log_path);
      result.artifacts.push_back(log_path);
      table += fmt::format("{}\t{}\t{}\t{}\t{:.6f}\t{:.6f}\t{:.9g}\n", i + 1, int(row.sal), int(row.me),
                           int(row.sfa), o.final_eval.ap50, o.final_eval.mar, o.final_loss);
    }
    write_text(out_dir / "ablation.tsv", table, result);

    spdlog::info("ablation baseline (no distillation)");
    const fs::path base_log = out_dir / "baseline.log";
    const RunOutcome b = run_config(baseline_config(cfg), train, val, registry, base_log);
    result.artifacts.push_back(base_log);
    write_text(out_dir / "baseline.tsv",
               fmt::format("row\tsal\tme\tsfa\tap50\tmar\tfinal_loss\nbaseline\t0\t0\t0\t{:.6f}\t{:.6f}\t{:.9g}\n",
                           b.final_eval.ap50, b.final_eval.mar, b.final_loss),
               result);
    result.message = table;
  });
}

CommandResult cmd_export_synth(const fs::path &config_path, const fs::path &out_dir, const Overrides &overrides) {
  return guarded([&](CommandResult &result) {
    const DistillConfig cfg = resolve_config(config_path, overrides);
    const std::vector<std::string> names = {"rectangle", "ellipse", "triangle"};
    export_dataset(training_data(cfg), out_dir / "train", names);
    export_dataset(validation_data(cfg), out_dir / "val", names);
    result.artifacts.push_back(out_dir / "train" / "annotations.json");
    result.artifacts.push_back(out_dir / "val" / "annotations.json");
    result.message = fmt::format("train={} val={}", cfg.data.num_images, cfg.data.val_images);
  });
}

} // namespace dfmsd
