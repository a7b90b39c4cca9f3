#include "dfmsd/config.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace dfmsd {

using nlohmann::json;

namespace {

std::string join(const std::vector<std::string> &items) {
  std::string out;
  for (const auto &s : items) {
    if (!out.empty())
      out += "; ";
    out += s;
  }
  return out;
}

/// Reads fields out of a JSON object, recording type errors and unknown keys
/// instead of throwing so that every problem is reported at once.
class Reader {
public:
  Reader(const json &node, std::string path, std::vector<std::string> &errors)
      : node_(node), path_(std::move(path)), errors_(errors) {
    if (!node_.is_object())
      errors_.push_back(where("") + " must be an object");
  }

  ~Reader() {
    if (!node_.is_object())
      return;
    for (const auto &[key, _] : node_.items())
      if (!seen_.count(key))
        errors_.push_back("unknown key " + where(key));
  }

  template <typename T> void get(const char *key, T &out) {
    seen_.insert(key);
    if (!node_.is_object() || !node_.contains(key))
      return;
    const json &v = node_.at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean())
          throw std::invalid_argument("boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer())
          throw std::invalid_argument("integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number())
          throw std::invalid_argument("number");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string())
          throw std::invalid_argument("string");
      }
      out = v.get<T>();
    } catch (const std::exception &e) {
      errors_.push_back(where(key) + ": expected " + e.what());
    }
  }

  const json *child(const char *key, json::value_t type) {
    seen_.insert(key);
    if (!node_.is_object() || !node_.contains(key))
      return nullptr;
    const json &v = node_.at(key);
    if (v.type() != type) {
      errors_.push_back(where(key) + ": expected " +
                        (type == json::value_t::array ? "array" : "object"));
      return nullptr;
    }
    return &v;
  }

  std::string where(const std::string &key) const {
    if (path_.empty())
      return key;
    return key.empty() ? path_ : path_ + "." + key;
  }

private:
  const json &node_;
  std::string path_;
  std::vector<std::string> &errors_;
  std::set<std::string> seen_;
};

void read_detector(const json &j, const std::string &path, TinyDetectorSpec &d,
                   std::vector<std::string> &errors) {
  Reader r(j, path, errors);
  r.get("width_multiplier", d.width_multiplier);
  r.get("fpn_levels", d.fpn_levels);
  r.get("num_classes", d.num_classes);
  r.get("base_channels", d.base_channels);
  r.get("fpn_channels", d.fpn_channels);
  r.get("image_size", d.image_size);
  if (const json *depth = r.child("depth", json::value_t::array)) {
    d.depth.clear();
    for (const auto &v : *depth) {
      if (!v.is_number_integer()) {
        errors.push_back(path + ".depth: expected integers");
        break;
      }
      d.depth.push_back(v.get<int>());
    }
  }
  std::string head = to_string(d.head);
  r.get("head", head);
  try {
    d.head = head_style_from_string(head);
  } catch (const std::invalid_argument &e) {
    errors.push_back(path + ".head: " + e.what());
  }
}

json write_detector(const TinyDetectorSpec &d) {
  return json{{"width_multiplier", d.width_multiplier},
              {"depth", d.depth},
              {"fpn_levels", d.fpn_levels},
              {"num_classes", d.num_classes},
              {"base_channels", d.base_channels},
              {"fpn_channels", d.fpn_channels},
              {"image_size", d.image_size},
              {"head", to_string(d.head)}};
}

DistillConfig from_json(const json &root) {
  DistillConfig cfg = default_config();
  std::vector<std::string> errors;
  {
    Reader r(root, "", errors);
    r.get("tau", cfg.tau);
    r.get("rho", cfg.rho);
    r.get("lambda_thresh", cfg.lambda_thresh);
    r.get("sigma", cfg.sigma);
    r.get("alpha", cfg.alpha);
    r.get("beta", cfg.beta);
    r.get("seed", cfg.seed);

    if (const json *o = r.child("optimizer", json::value_t::object)) {
      Reader ro(*o, "optimizer", errors);
      ro.get("momentum", cfg.optimizer.momentum);
      ro.get("weight_decay", cfg.optimizer.weight_decay);
      ro.get("learning_rate", cfg.optimizer.learning_rate);
      ro.get("batch_size", cfg.optimizer.batch_size);
      ro.get("grad_clip", cfg.optimizer.grad_clip);
    }
    if (const json *o = r.child("augment", json::value_t::object)) {
      Reader ra(*o, "augment", errors);
      ra.get("score_floor", cfg.augment.score_floor);
      ra.get("noise_prob", cfg.augment.noise_prob);
      ra.get("crop_min_keep", cfg.augment.crop_min_keep);
      ra.get("crop_max_keep", cfg.augment.crop_max_keep);
      ra.get("band_low", cfg.augment.band_low);
      ra.get("band_high", cfg.augment.band_high);
    }
    if (const json *o = r.child("alignment", json::value_t::object)) {
      Reader ra(*o, "alignment", errors);
      ra.get("per_channel", cfg.alignment.per_channel);
      ra.get("weight", cfg.alignment.weight);
      if (const json *lv = ra.child("levels", json::value_t::array)) {
        cfg.alignment.levels.clear();
        for (const auto &v : *lv) {
          if (!v.is_number_integer()) {
            errors.push_back("alignment.levels: expected integers");
            break;
          }
          cfg.alignment.levels.push_back(v.get<int>());
        }
      }
    }
    if (const json *o = r.child("data", json::value_t::object)) {
      Reader rd(*o, "data", errors);
      rd.get("source", cfg.data.source);
      rd.get("coco_path", cfg.data.coco_path);
      rd.get("num_images", cfg.data.num_images);
      rd.get("val_images", cfg.data.val_images);
      rd.get("image_size", cfg.data.image_size);
      rd.get("size_mix", cfg.data.size_mix);
    }
    if (const json *o = r.child("student", json::value_t::object))
      read_detector(*o, "student", cfg.student, errors);
    if (const json *arr = r.child("teachers", json::value_t::array)) {
      cfg.teachers.clear();
      for (std::size_t i = 0; i < arr->size(); ++i) {
        const std::string path = "teachers[" + std::to_string(i) + "]";
        TeacherSpec t;
        Reader rt((*arr)[i], path, errors);
        rt.get("id", t.id);
        rt.get("strength_rank", t.strength_rank);
        rt.get("checkpoint", t.checkpoint);
        rt.get("pretrain_steps", t.pretrain_steps);
        rt.get("pretrain_learning_rate", t.pretrain_learning_rate);
        if (const json *d = rt.child("detector", json::value_t::object))
          read_detector(*d, path + ".detector", t.detector, errors);
        cfg.teachers.push_back(std::move(t));
      }
    }
    if (const json *arr = r.child("stages", json::value_t::array)) {
      cfg.stages.clear();
      for (std::size_t i = 0; i < arr->size(); ++i) {
        const std::string path = "stages[" + std::to_string(i) + "]";
        StageSpec s;
        Reader rs((*arr)[i], path, errors);
        rs.get("teacher_id", s.teacher_id);
        rs.get("enable_masking_enhancement", s.enable_masking_enhancement);
        rs.get("enable_semantic_alignment", s.enable_semantic_alignment);
        rs.get("steps", s.steps);
        cfg.stages.push_back(std::move(s));
      }
    }
  }
  for (auto &v : cfg.violations())
    errors.push_back(std::move(v));
  if (!errors.empty())
    throw ConfigError(std::move(errors));
  return cfg;
}

} // namespace

ConfigError::ConfigError(std::vector<std::string> violations)
    : std::runtime_error("invalid config: " + join(violations)), violations_(std::move(violations)) {}

ConfigError::ConfigError(const std::string &single)
    : std::runtime_error("invalid config: " + single), violations_{single} {}

const TeacherSpec *DistillConfig::find_teacher(const std::string &id) const {
  for (const auto &t : teachers)
    if (t.id == id)
      return &t;
  return nullptr;
}

int DistillConfig::total_steps() const {
  int total = 0;
  for (const auto &s : stages)
    total += s.steps;
  return total;
}

std::vector<std::string> DistillConfig::violations() const {
  std::vector<std::string> v;
  auto finite = [](double x) { return std::isfinite(x); };
  if (!(finite(tau) && tau > 0))
    v.push_back("tau must be > 0");
  if (!(finite(rho) && rho > 0 && rho < 1))
    v.push_back("rho out of (0,1)");
  if (!(finite(lambda_thresh) && lambda_thresh > 0 && lambda_thresh <= 1))
    v.push_back("lambda_thresh out of (0,1]");
  if (!(finite(sigma) && sigma >= 0))
    v.push_back("sigma must be >= 0");
  if (!(finite(alpha) && alpha >= 0))
    v.push_back("alpha must be >= 0");
  if (!(finite(beta) && beta >= 0))
    v.push_back("beta must be >= 0");

  if (!(finite(optimizer.learning_rate) && optimizer.learning_rate > 0))
    v.push_back("optimizer.learning_rate must be > 0");
  if (!(finite(optimizer.momentum) && optimizer.momentum >= 0 && optimizer.momentum < 1))
    v.push_back("optimizer.momentum out of [0,1)");
  if (!(finite(optimizer.weight_decay) && optimizer.weight_decay >= 0))
    v.push_back("optimizer.weight_decay must be >= 0");
  if (optimizer.batch_size < 1)
    v.push_back("optimizer.batch_size must be >= 1");
  if (!(finite(optimizer.grad_clip) && optimizer.grad_clip >= 0))
    v.push_back("optimizer.grad_clip must be >= 0");

  if (!(augment.score_floor >= 0 && augment.score_floor <= 1))
    v.push_back("augment.score_floor out of [0,1]");
  if (!(augment.noise_prob >= 0 && augment.noise_prob <= 1))
    v.push_back("augment.noise_prob out of [0,1]");
  if (!(augment.crop_min_keep > 0 && augment.crop_min_keep <= augment.crop_max_keep &&
        augment.crop_max_keep <= 1))
    v.push_back("augment crop keep range must satisfy 0 < min <= max <= 1");
  if (!(augment.band_low > 0 && augment.band_low < augment.band_high))
    v.push_back("augment band edges must satisfy 0 < band_low < band_high");

  if (!(finite(alignment.weight) && alignment.weight >= 0))
    v.push_back("alignment.weight must be >= 0");
  for (int l : alignment.levels)
    if (l < 0 || l >= student.fpn_levels)
      v.push_back("alignment.levels contains out-of-range level " + std::to_string(l));

  if (data.source != "synthetic" && data.source != "coco")
    v.push_back("data.source must be \"synthetic\" or \"coco\"");
  if (data.source == "coco" && data.coco_path.empty())
    v.push_back("data.coco_path required when data.source is \"coco\"");
  if (data.num_images < 1)
    v.push_back("data.num_images must be >= 1");
  if (data.val_images < 0)
    v.push_back("data.val_images must be >= 0");
  if (!(data.size_mix >= 0 && data.size_mix <= 1))
    v.push_back("data.size_mix out of [0,1]");
  if (data.image_size != student.image_size)
    v.push_back("data.image_size must equal student.image_size");

  for (auto &s : student.violations("student"))
    v.push_back(std::move(s));

  std::set<std::string> ids;
  for (std::size_t i = 0; i < teachers.size(); ++i) {
    const auto &t = teachers[i];
    const std::string p = "teachers[" + std::to_string(i) + "]";
    if (t.id.empty())
      v.push_back(p + ".id must be non-empty");
    else if (!ids.insert(t.id).second)
      v.push_back(p + ".id '" + t.id + "' is duplicated");
    if (t.pretrain_steps < 0)
      v.push_back(p + ".pretrain_steps must be >= 0");
    if (!(t.pretrain_learning_rate > 0))
      v.push_back(p + ".pretrain_learning_rate must be > 0");
    for (auto &s : t.detector.violations(p + ".detector"))
      v.push_back(std::move(s));
    if (t.detector.fpn_levels != student.fpn_levels)
      v.push_back(p + ".detector.fpn_levels must equal student.fpn_levels");
    if (t.detector.image_size != student.image_size)
      v.push_back(p + ".detector.image_size must equal student.image_size");
    if (t.detector.num_classes != student.num_classes)
      v.push_back(p + ".detector.num_classes must equal student.num_classes");
  }

  if (stages.empty())
    v.push_back("stages must contain at least one stage");
  int previous_rank = 0;
  bool have_previous = false;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const auto &s = stages[i];
    const std::string p = "stages[" + std::to_string(i) + "]";
    if (s.steps < 1)
      v.push_back(p + ".steps must be >= 1");
    const TeacherSpec *t = find_teacher(s.teacher_id);
    if (!t) {
      v.push_back(p + ".teacher_id '" + s.teacher_id + "' is not a registered teacher");
      continue;
    }
    if (have_previous && t->strength_rank <= previous_rank)
      v.push_back(p + ": teacher strength_rank must strictly increase along the stage order");
    previous_rank = t->strength_rank;
    have_previous = true;
  }
  return v;
}

void DistillConfig::validate() const {
  auto v = violations();
  if (!v.empty())
    throw ConfigError(std::move(v));
}

DistillConfig default_config() {
  DistillConfig cfg;
  cfg.student = TinyDetectorSpec{};
  cfg.student.width_multiplier = 1.0;
  cfg.student.depth = {0, 0, 0, 0, 0};
  cfg.student.head = HeadStyle::anchor_based;

  TeacherSpec weak;
  weak.id = "weak";
  weak.strength_rank = 1;
  weak.detector = cfg.student;
  weak.detector.width_multiplier = 1.5;
  weak.detector.depth = {0, 0, 1, 0, 0};
  weak.detector.head = HeadStyle::anchor_free;

  TeacherSpec strong = weak;
  strong.id = "strong";
  strong.strength_rank = 2;
  strong.detector.width_multiplier = 2.0;
  strong.detector.depth = {0, 1, 1, 1, 0};

  cfg.teachers = {weak, strong};
  cfg.stages = {StageSpec{"weak", false, true, 200}, StageSpec{"strong", true, true, 200}};
  return cfg;
}

DistillConfig parse_config(const std::string &text) {
  json root;
  try {
    root = json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const json::parse_error &e) {
    throw ConfigError(std::string("unparseable document: ") + e.what());
  }
  if (root.is_null())
    root = json::object();
  return from_json(root);
}

DistillConfig load_config(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("missing file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  std::string text = ss.str();
  if (text.find_first_not_of(" \t\r\n") == std::string::npos)
    text = "{}";
  return parse_config(text);
}

std::string serialize_config(const DistillConfig &cfg) {
  json teachers = json::array();
  for (const auto &t : cfg.teachers)
    teachers.push_back({{"id", t.id},
                        {"strength_rank", t.strength_rank},
                        {"detector", write_detector(t.detector)},
                        {"checkpoint", t.checkpoint},
                        {"pretrain_steps", t.pretrain_steps},
                        {"pretrain_learning_rate", t.pretrain_learning_rate}});
  json stages = json::array();
  for (const auto &s : cfg.stages)
    stages.push_back({{"teacher_id", s.teacher_id},
                      {"enable_masking_enhancement", s.enable_masking_enhancement},
                      {"enable_semantic_alignment", s.enable_semantic_alignment},
                      {"steps", s.steps}});
  json root = {
      {"tau", cfg.tau},
      {"rho", cfg.rho},
      {"lambda_thresh", cfg.lambda_thresh},
      {"sigma", cfg.sigma},
      {"alpha", cfg.alpha},
      {"beta", cfg.beta},
      {"seed", cfg.seed},
      {"optimizer",
       {{"momentum", cfg.optimizer.momentum},
        {"weight_decay", cfg.optimizer.weight_decay},
        {"learning_rate", cfg.optimizer.learning_rate},
        {"batch_size", cfg.optimizer.batch_size},
        {"grad_clip", cfg.optimizer.grad_clip}}},
      {"augment",
       {{"score_floor", cfg.augment.score_floor},
        {"noise_prob", cfg.augment.noise_prob},
        {"crop_min_keep", cfg.augment.crop_min_keep},
        {"crop_max_keep", cfg.augment.crop_max_keep},
        {"band_low", cfg.augment.band_low},
        {"band_high", cfg.augment.band_high}}},
      {"alignment",
       {{"levels", cfg.alignment.levels},
        {"per_channel", cfg.alignment.per_channel},
        {"weight", cfg.alignment.weight}}},
      {"data",
       {{"source", cfg.data.source},
        {"coco_path", cfg.data.coco_path},
        {"num_images", cfg.data.num_images},
        {"val_images", cfg.data.val_images},
        {"image_size", cfg.data.image_size},
        {"size_mix", cfg.data.size_mix}}},
      {"student", write_detector(cfg.student)},
      {"teachers", teachers},
      {"stages", stages},
  };
  return root.dump(2) + "\n";
}

void save_config(const DistillConfig &cfg, const std::filesystem::path &path) {
  std::ofstream out(path);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << serialize_config(cfg);
}

std::string serialize_detector_spec(const TinyDetectorSpec &spec) { return write_detector(spec).dump(); }

TinyDetectorSpec parse_detector_spec(const std::string &text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error &e) {
    throw ConfigError(std::string("unparseable detector spec: ") + e.what());
  }
  TinyDetectorSpec spec;
  std::vector<std::string> errors;
  read_detector(j, "detector", spec, errors);
  for (auto &v : spec.violations("detector"))
    errors.push_back(std::move(v));
  if (!errors.empty())
    throw ConfigError(std::move(errors));
  return spec;
}

} // namespace dfmsd
