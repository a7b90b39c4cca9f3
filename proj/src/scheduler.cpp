#include "dfmsd/scheduler.hpp"

#include "dfmsd/checkpoint.hpp"
#include "dfmsd/evaluation.hpp"
#include "dfmsd/freq_augment.hpp"

#include <fmt/format.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace dfmsd {

using nlohmann::json;

namespace {

constexpr std::uint64_t kMeStream = 0x6d65ULL;
constexpr std::uint64_t kTeacherStream = 0x7465ULL;
constexpr std::uint64_t kStudentStream = 0x7374ULL;
constexpr std::uint64_t kAdapterStream = 0x6164ULL;
constexpr std::uint64_t kOrderStream = 0x6f72ULL;

std::uint64_t hash_string(const std::string &s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Sample order: a fresh seeded permutation of the dataset per epoch.
class SampleOrder {
public:
  SampleOrder(std::uint64_t seed, std::size_t n) : seed_(seed), n_(n) {}

  std::size_t at(std::uint64_t position) {
    const std::uint64_t epoch = position / n_;
    auto it = perms_.find(epoch);
    if (it == perms_.end()) {
      std::vector<std::size_t> perm(n_);
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng(derive_seed(seed_, {epoch}));
      std::shuffle(perm.begin(), perm.end(), rng);
      it = perms_.emplace(epoch, std::move(perm)).first;
    }
    return it->second[position % n_];
  }

private:
  std::uint64_t seed_;
  std::size_t n_;
  std::map<std::uint64_t, std::vector<std::size_t>> perms_;
};

std::vector<int> alignment_levels(const DistillConfig &cfg, int levels) {
  if (cfg.alignment.levels.empty()) {
    std::vector<int> all(levels);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  for (int l : cfg.alignment.levels)
    if (l < 0 || l >= levels)
      throw ConfigError("alignment.levels: level " + std::to_string(l) + " out of range");
  return cfg.alignment.levels;
}

/// Masked reconstruction error summed over levels for one (teacher, student) pyramid pair.
nn::Var reconstruction_term(const MaskedReconstructor &adapters, const FeaturePyramidd &teacher,
                            const std::vector<nn::Var> &projected, const DistillConfig &cfg,
                            std::uint64_t mask_seed) {
  nn::Var total;
  for (std::size_t l = 0; l < teacher.size(); ++l) {
    const nn::Shape s = projected[l].shape();
    const auto att = dual_attention(teacher[l], cfg.tau, s.height, s.width);
    const DualMask mask = build_masks(att, cfg.rho, derive_seed(mask_seed, {l}));
    nn::Var rec = adapters.reconstruct(static_cast<int>(l), projected[l], mask);
    nn::Var err = nn::mse(to_var(teacher[l]), rec);
    total = l == 0 ? err : nn::add(total, err);
  }
  return total;
}

std::vector<nn::Var> project_all(const MaskedReconstructor &adapters, const std::vector<nn::Var> &pyramid) {
  std::vector<nn::Var> out;
  out.reserve(pyramid.size());
  for (std::size_t l = 0; l < pyramid.size(); ++l)
    out.push_back(adapters.project(static_cast<int>(l), pyramid[l]));
  return out;
}

nn::Var alignment_term(const FeaturePyramidd &teacher, const std::vector<nn::Var> &projected,
                       const std::vector<int> &levels, bool per_channel) {
  nn::Var total;
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const int l = levels[i];
    nn::Var t = to_var(teacher[l]);
    nn::Var st = per_channel ? nn::standardize_rows(projected[l]) : nn::standardize(projected[l]);
    nn::Var tt = per_channel ? nn::standardize_rows(t) : nn::standardize(t);
    nn::Var err = nn::mse(tt, st);
    total = i == 0 ? err : nn::add(total, err);
  }
  return nn::scale(total, 1.0 / static_cast<double>(levels.size()));
}

void check_finite(const MetricsRecord &r) {
  for (double v : {r.loss_total, r.loss_gt, r.loss_distill, r.loss_me, r.loss_recon, r.loss_sfa})
    if (!std::isfinite(v))
      throw NumericError(fmt::format("non-finite loss at step {}: {}", r.step, format_record(r)));
}

json adapter_header(const MaskedReconstructor &a) {
  return json{{"levels", a.levels()}, {"student_channels", a.student_channels()},
              {"teacher_channels", a.teacher_channels()}};
}

void store_params(const nn::ParameterList &params, const std::string &prefix, CheckpointBlob &blob) {
  for (auto *p : params)
    blob.tensors[prefix + p->name] = p->var.value();
}

void restore_params(const nn::ParameterList &params, const std::string &prefix, const CheckpointBlob &blob) {
  for (auto *p : params) {
    auto it = blob.tensors.find(prefix + p->name);
    if (it == blob.tensors.end())
      throw CheckpointError("checkpoint lacks tensor " + prefix + p->name);
    const Eigen::MatrixXd &v = p->var.value();
    if (it->second.rows() != v.rows() || it->second.cols() != v.cols())
      throw CheckpointError("checkpoint tensor " + prefix + p->name + " has the wrong shape");
    p->var.mutable_value() = it->second;
  }
}

json parse_header(const CheckpointBlob &blob) {
  try {
    return json::parse(blob.header);
  } catch (const json::exception &e) {
    throw CheckpointError(std::string("unreadable checkpoint header: ") + e.what());
  }
}

} // namespace

void TeacherRegistry::add(const TeacherSpec &spec, Detector model) {
  if (entries_.count(spec.id))
    throw ConfigError("teacher '" + spec.id + "' registered twice");
  model.set_frozen(true);
  entries_.emplace(spec.id, Entry{spec, std::make_unique<Detector>(std::move(model))});
}

const Detector &TeacherRegistry::model(const std::string &id) const {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw ConfigError("unregistered teacher '" + id + "'");
  return *it->second.model;
}

Detector &TeacherRegistry::model(const std::string &id) {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw ConfigError("unregistered teacher '" + id + "'");
  return *it->second.model;
}

int TeacherRegistry::strength_rank(const std::string &id) const {
  auto it = entries_.find(id);
  if (it == entries_.end())
    throw ConfigError("unregistered teacher '" + id + "'");
  return it->second.spec.strength_rank;
}

void TeacherRegistry::validate_order(const std::vector<StageSpec> &stages) const {
  std::vector<std::string> errors;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string &id = stages[i].teacher_id;
    if (!contains(id)) {
      errors.push_back(fmt::format("stages[{}].teacher_id: unregistered teacher '{}'", i, id));
      continue;
    }
    if (i > 0 && contains(stages[i - 1].teacher_id) &&
        strength_rank(id) <= strength_rank(stages[i - 1].teacher_id))
      errors.push_back(fmt::format("stages[{}]: strength_rank must increase along the stage order", i));
  }
  if (!errors.empty())
    throw ConfigError(std::move(errors));
}

std::uint64_t TeacherRegistry::checksum(const std::string &id) { return model(id).checksum(); }

void save_model(Detector &model, const std::filesystem::path &path) {
  CheckpointBlob blob;
  blob.kind = CheckpointKind::model;
  blob.header = json{{"detector", json::parse(serialize_detector_spec(model.spec()))}}.dump();
  store_params(model.parameters(), "", blob);
  write_checkpoint(blob, path);
}

Detector load_model(const std::filesystem::path &path) {
  const CheckpointBlob blob = read_checkpoint(path);
  if (blob.kind != CheckpointKind::model)
    throw CheckpointError(path.string() + " is not a model checkpoint");
  const json header = parse_header(blob);
  if (!header.contains("detector"))
    throw CheckpointError("checkpoint header lacks a detector spec");
  TinyDetectorSpec spec;
  try {
    spec = parse_detector_spec(header.at("detector").dump());
  } catch (const ConfigError &e) {
    throw CheckpointError(std::string("bad detector spec in checkpoint: ") + e.what());
  }
  Detector model(spec, 0);
  restore_params(model.parameters(), "", blob);
  return model;
}

void train_detector(Detector &model, const Dataset &data, int steps, double learning_rate,
                    const OptimizerConfig &opt, std::uint64_t seed, MetricsLog *log) {
  if (data.empty())
    throw std::invalid_argument("train_detector: no samples");
  const nn::Sgd sgd(learning_rate, opt.momentum, opt.weight_decay, opt.grad_clip);
  nn::MomentumBuffers momentum;
  nn::ParameterList params = model.parameters();
  SampleOrder order(derive_seed(seed, {kOrderStream}), data.size());
  const int batch = opt.batch_size;
  for (int t = 0; t < steps; ++t) {
    double gt = 0;
    for (int b = 0; b < batch; ++b) {
      const auto &sample = data[order.at(static_cast<std::uint64_t>(t) * batch + b)];
      DetectionLoss loss = model.gt_loss(model.forward(sample.image), sample.ground_truth);
      loss.total.backward();
      gt += loss.total.item();
    }
    MetricsRecord r;
    r.step = t + 1;
    r.loss_gt = r.loss_total = gt / batch;
    check_finite(r);
    sgd.step(params, momentum, 1.0 / batch);
    nn::zero_grad(params);
    if (log)
      log->record(r);
    if ((t + 1) % 100 == 0)
      spdlog::debug("pretrain step {} gt loss {:.4f}", t + 1, r.loss_gt);
  }
}

Detector prepare_teacher(const TeacherSpec &spec, const Dataset &data, const DistillConfig &cfg,
                         const std::filesystem::path &checkpoint_root) {
  std::filesystem::path ckpt;
  if (!spec.checkpoint.empty()) {
    ckpt = spec.checkpoint;
    if (ckpt.is_relative() && !checkpoint_root.empty())
      ckpt = checkpoint_root / ckpt;
  }
  if (!ckpt.empty() && std::filesystem::exists(ckpt)) {
    spdlog::info("loading teacher '{}' from {}", spec.id, ckpt.string());
    Detector model = load_model(ckpt);
    if (!(model.spec() == spec.detector))
      throw ConfigError("teacher '" + spec.id + "': checkpoint architecture differs from the config");
    return model;
  }
  const std::uint64_t seed = derive_seed(cfg.seed, {kTeacherStream, hash_string(spec.id)});
  Detector model(spec.detector, seed);
  spdlog::info("pretraining teacher '{}' for {} steps", spec.id, spec.pretrain_steps);
  train_detector(model, data, spec.pretrain_steps, spec.pretrain_learning_rate, cfg.optimizer, seed);
  if (!ckpt.empty()) {
    if (ckpt.has_parent_path())
      std::filesystem::create_directories(ckpt.parent_path());
    save_model(model, ckpt);
  }
  return model;
}

TeacherRegistry build_registry(const DistillConfig &cfg, const Dataset &data,
                               const std::filesystem::path &checkpoint_root) {
  TeacherRegistry registry;
  std::set<std::string> used;
  for (const auto &s : cfg.stages)
    used.insert(s.teacher_id);
  for (const auto &t : cfg.teachers) {
    if (!used.count(t.id))
      continue;
    registry.add(t, prepare_teacher(t, data, cfg, checkpoint_root));
  }
  registry.validate_order(cfg.stages);
  return registry;
}

nn::ParameterList TrainState::trainable() {
  nn::ParameterList out = student.parameters();
  for (auto *p : adapters.parameters())
    out.push_back(p);
  return out;
}

TrainState initial_state(const DistillConfig &cfg) {
  return TrainState(Detector(cfg.student, derive_seed(cfg.seed, {kStudentStream})), cfg.seed);
}

void save_train_state(TrainState &state, const std::filesystem::path &path) {
  CheckpointBlob blob;
  blob.kind = CheckpointKind::train_state;
  json header{{"detector", json::parse(serialize_detector_spec(state.student.spec()))},
              {"adapters", adapter_header(state.adapters)},
              {"step", state.step},
              {"stage_index", state.stage_index},
              {"stage_step", state.stage_step},
              {"stage_open", state.stage_open},
              {"stages_completed", state.stages_completed},
              {"seed", state.seed}};
  blob.header = header.dump();
  store_params(state.student.parameters(), "student/", blob);
  store_params(state.adapters.parameters(), "adapters/", blob);
  for (const auto &[name, buf] : state.momentum)
    blob.tensors["momentum/" + name] = buf;
  write_checkpoint(blob, path);
}

TrainState load_train_state(const std::filesystem::path &path) {
  const CheckpointBlob blob = read_checkpoint(path);
  if (blob.kind != CheckpointKind::train_state)
    throw CheckpointError(path.string() + " is not a training-state checkpoint");
  const json h = parse_header(blob);
  try {
    TrainState state(Detector(parse_detector_spec(h.at("detector").dump()), 0), h.at("seed").get<std::uint64_t>());
    const json &a = h.at("adapters");
    if (a.at("levels").get<int>() > 0)
      state.adapters = MaskedReconstructor(a.at("levels").get<int>(), a.at("student_channels").get<int>(),
                                           a.at("teacher_channels").get<int>(), 0);
    state.step = h.at("step").get<int>();
    state.stage_index = h.at("stage_index").get<int>();
    state.stage_step = h.at("stage_step").get<int>();
    state.stage_open = h.at("stage_open").get<bool>();
    state.stages_completed = h.at("stages_completed").get<int>();
    restore_params(state.student.parameters(), "student/", blob);
    restore_params(state.adapters.parameters(), "adapters/", blob);
    const std::string prefix = "momentum/";
    for (const auto &[name, m] : blob.tensors)
      if (name.compare(0, prefix.size(), prefix) == 0)
        state.momentum[name.substr(prefix.size())] = m;
    return state;
  } catch (const json::exception &e) {
    throw CheckpointError(std::string("malformed training-state header: ") + e.what());
  } catch (const ConfigError &e) {
    throw CheckpointError(std::string("bad detector spec in checkpoint: ") + e.what());
  }
}

void run_stage(TrainState &state, const DistillConfig &cfg, int stage_index, const Dataset &data,
               TeacherRegistry &registry, MetricsLog &log, const RunOptions &options) {
  if (stage_index < 0 || stage_index >= cfg.num_stages())
    throw std::out_of_range("run_stage: stage index out of range");
  if (data.empty())
    throw std::invalid_argument("run_stage: no samples");
  const StageSpec &stage = cfg.stages[stage_index];
  const Detector &teacher = registry.model(stage.teacher_id);
  const TinyDetectorSpec &sspec = state.student.spec();
  if (teacher.spec().fpn_levels != sspec.fpn_levels || teacher.spec().image_size != sspec.image_size)
    throw ConfigError("teacher '" + stage.teacher_id + "' pyramid does not match the student's");

  const bool resuming = state.stage_open && state.stage_index == stage_index;
  if (!resuming) {
    state.stage_index = stage_index;
    state.stage_step = 0;
    state.stage_open = true;
    state.momentum.clear();
    state.adapters = MaskedReconstructor(sspec.fpn_levels, sspec.pyramid_channels(),
                                         teacher.spec().pyramid_channels(),
                                         derive_seed(state.seed, {kAdapterStream, static_cast<std::uint64_t>(stage_index)}));
    log.event("stage_begin", {{"stage", std::to_string(stage_index)},
                              {"teacher", stage.teacher_id},
                              {"student_checksum", std::to_string(state.student.checksum())}});
  }

  const bool distill = cfg.alpha > 0.0;
  const bool use_me = distill && stage.enable_masking_enhancement;
  const bool use_sfa = distill && stage.enable_semantic_alignment;
  const std::vector<int> sfa_levels = use_sfa ? alignment_levels(cfg, sspec.fpn_levels) : std::vector<int>{};

  // candidate boxes for the area statistic, snapshotted at the stage boundary
  std::vector<BoxSet> candidates;
  if (use_me) {
    const Detector &source =
        registry.model(stage_index > 0 ? cfg.stages[stage_index - 1].teacher_id : stage.teacher_id);
    candidates.reserve(data.size());
    for (const auto &sample : data)
      candidates.push_back(source.predict(sample.image));
  }

  const nn::Sgd sgd(cfg.optimizer.learning_rate, cfg.optimizer.momentum, cfg.optimizer.weight_decay,
                    cfg.optimizer.grad_clip);
  nn::ParameterList params = state.trainable();
  const int batch = cfg.optimizer.batch_size;
  const std::uint64_t stage_u = static_cast<std::uint64_t>(stage_index);
  SampleOrder order(derive_seed(state.seed, {kOrderStream, stage_u}), data.size());

  int taken = 0;
  while (state.stage_step < stage.steps && (options.max_steps < 0 || taken < options.max_steps)) {
    const std::uint64_t t = static_cast<std::uint64_t>(state.stage_step);
    MetricsRecord r;
    r.step = state.step + 1;
    r.stage_index = stage_index;
    for (int b = 0; b < batch; ++b) {
      const std::uint64_t bu = static_cast<std::uint64_t>(b);
      const std::size_t idx = order.at(t * batch + b);
      const auto &sample = data[idx];
      const DetectorOutput out = state.student.forward(sample.image);
      DetectionLoss gt = state.student.gt_loss(out, sample.ground_truth);
      nn::Var total = gt.total;
      r.loss_gt += gt.total.item();

      if (distill) {
        const FeaturePyramidd tfeat = teacher.extract_pyramid(sample.image);
        const std::vector<nn::Var> projected = project_all(state.adapters, out.pyramid);
        nn::Var d = reconstruction_term(state.adapters, tfeat, projected, cfg,
                                        derive_seed(state.seed, {stage_u, t, bu}));
        r.loss_recon += d.item();
        if (use_sfa) {
          nn::Var sfa = alignment_term(tfeat, projected, sfa_levels, cfg.alignment.per_channel);
          r.loss_sfa += sfa.item();
          d = nn::add(d, nn::scale(sfa, cfg.alignment.weight));
        }
        if (use_me) {
          const EnhancedInput enh =
              enhance_input(sample.image, candidates[idx], cfg, derive_seed(state.seed, {kMeStream, stage_u, t, bu}));
          const FeaturePyramidd tenh = teacher.extract_pyramid(enh.image);
          const DetectorOutput senh = state.student.forward(enh.image);
          nn::Var me = reconstruction_term(state.adapters, tenh, project_all(state.adapters, senh.pyramid), cfg,
                                           derive_seed(state.seed, {kMeStream, stage_u, t, bu, 1}));
          r.loss_me += me.item();
          d = nn::add(d, nn::scale(me, cfg.beta));
        }
        r.loss_distill += d.item();
        total = nn::add(total, nn::scale(d, cfg.alpha));
      }
      r.loss_total += total.item();
      total.backward();
    }
    for (double *v : {&r.loss_total, &r.loss_gt, &r.loss_distill, &r.loss_me, &r.loss_recon, &r.loss_sfa})
      *v /= batch;
    check_finite(r);
    sgd.step(params, state.momentum, 1.0 / batch);
    nn::zero_grad(params);

    ++state.step;
    ++state.stage_step;
    ++taken;
    if (state.stage_step == stage.steps && options.validation) {
      const EvalMetrics m = evaluate_model(state.student, *options.validation);
      r.eval = m;
    }
    log.record(r);
    if (state.stage_step % 50 == 0)
      spdlog::debug("stage {} step {} loss {:.5f}", stage_index, state.stage_step, r.loss_total);
  }

  if (state.stage_step >= stage.steps) {
    state.stage_open = false;
    state.stages_completed = std::max(state.stages_completed, stage_index + 1);
    log.event("stage_end", {{"stage", std::to_string(stage_index)},
                            {"teacher", stage.teacher_id},
                            {"steps", std::to_string(state.stage_step)},
                            {"student_checksum", std::to_string(state.student.checksum())}});
  }
}

ScheduleResult run_schedule(TrainState &state, const DistillConfig &cfg, const Dataset &data,
                            TeacherRegistry &registry, MetricsLog &log, const RunOptions &options) {
  if (cfg.num_stages() < 1)
    throw ConfigError("stages: at least one stage is required");
  registry.validate_order(cfg.stages);
  ScheduleResult result;
  RunOptions remaining = options;
  int first = state.stage_open ? state.stage_index : state.stages_completed;
  for (int s = first; s < cfg.num_stages(); ++s) {
    result.stage_start_checksums.push_back(state.student.checksum());
    const int before = state.step;
    run_stage(state, cfg, s, data, registry, log, remaining);
    if (remaining.max_steps >= 0) {
      remaining.max_steps -= state.step - before;
      if (state.stage_open)
        break;
    }
    result.stage_end_checksums.push_back(state.student.checksum());
  }
  return result;
}

EvalMetrics evaluate_model(const Detector &model, const Dataset &data) {
  std::vector<BoxSet> preds, gts;
  preds.reserve(data.size());
  gts.reserve(data.size());
  for (const auto &sample : data) {
    preds.push_back(model.predict(sample.image));
    gts.push_back(sample.ground_truth);
  }
  const EvalResult r = evaluate_ap(preds, gts);
  return {r.ap50, r.mar};
}

} // namespace dfmsd
