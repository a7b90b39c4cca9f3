#include "dfmsd/dataset.hpp"

#include "dfmsd/freq_augment.hpp"
#include "dfmsd/random.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace dfmsd {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct ShapeDraw {
  int kind = 0;
  Box box;
  double rgb[3] = {0, 0, 0};
};

bool inside_shape(const ShapeDraw &s, double x, double y) {
  const Box &b = s.box;
  if (x < b.x_min || x > b.x_max || y < b.y_min || y > b.y_max)
    return false;
  switch (s.kind) {
  case 0:
    return true;
  case 1: {
    const double cx = 0.5 * (b.x_min + b.x_max), cy = 0.5 * (b.y_min + b.y_max);
    const double dx = (x - cx) / (0.5 * b.width()), dy = (y - cy) / (0.5 * b.height());
    return dx * dx + dy * dy <= 1.0;
  }
  default: {
    // apex at top-center, base along the bottom edge
    const double t = (y - b.y_min) / b.height();
    const double half = 0.5 * t * b.width();
    const double cx = 0.5 * (b.x_min + b.x_max);
    return std::abs(x - cx) <= half;
  }
  }
}

std::vector<ShapeDraw> sample_layout(bool small, Rng &rng) {
  for (;;) {
    std::vector<ShapeDraw> shapes;
    const int count = small ? 2 + static_cast<int>(uniform_index(rng, 4)) : 1 + static_cast<int>(uniform_index(rng, 2));
    double area = 0.0;
    for (int i = 0; i < count; ++i) {
      ShapeDraw s;
      s.kind = static_cast<int>(uniform_index(rng, kSynthClasses));
      const double lo = small ? 0.14 : 0.6, hi = small ? 0.32 : 0.95;
      const double w = uniform(rng, lo, hi), h = uniform(rng, lo, hi);
      const double x0 = uniform(rng, 0.0, 1.0 - w), y0 = uniform(rng, 0.0, 1.0 - h);
      s.box = {x0, y0, x0 + w, y0 + h};
      // saturated colors: one channel high, one low
      const int hi_c = static_cast<int>(uniform_index(rng, 3));
      const int lo_c = (hi_c + 1 + static_cast<int>(uniform_index(rng, 2))) % 3;
      for (int c = 0; c < 3; ++c)
        s.rgb[c] = uniform(rng, 0.3, 0.7);
      s.rgb[hi_c] = uniform(rng, 0.85, 1.0);
      s.rgb[lo_c] = uniform(rng, 0.0, 0.15);
      area += s.box.area();
      shapes.push_back(s);
    }
    if (small ? area < 0.5 : area >= 0.5)
      return shapes;
  }
}

std::string read_file(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw CocoError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const json &require(const json &node, const char *key, const std::string &where) {
  if (!node.is_object() || !node.contains(key))
    throw CocoError("missing key \"" + std::string(key) + "\" in " + where);
  return node.at(key);
}

} // namespace

Dataset synth_dataset(int n, int image_size, double size_mix, std::uint64_t seed) {
  if (n < 1)
    throw std::invalid_argument("synth_dataset: n must be >= 1");
  if (!(size_mix >= 0.0 && size_mix <= 1.0))
    throw std::invalid_argument("synth_dataset: size_mix outside [0,1]");

  const int small_count = static_cast<int>(std::lround(size_mix * n));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng order_rng = make_rng(seed, {0x5e7ULL});
  std::shuffle(order.begin(), order.end(), order_rng);
  std::vector<bool> small(n, false);
  for (int i = 0; i < small_count; ++i)
    small[order[i]] = true;

  Dataset data(n);
  for (int i = 0; i < n; ++i) {
    Rng rng = make_rng(seed, {static_cast<std::uint64_t>(i), 1});
    Image bg = pink_noise_image(image_size, image_size, rng());
    double tint[3];
    for (double &t : tint)
      t = uniform(rng, 0.35, 0.65);
    Image img(image_size, image_size);
    for (int c = 0; c < 3; ++c)
      img.data.row(c) = (tint[c] + 0.6 * (bg.data.row(c).array() - 0.5)).matrix();

    const auto shapes = sample_layout(small[i], rng);
    BoxSet gt;
    gt.image_height = gt.image_width = image_size;
    for (const auto &s : shapes) {
      for (int y = 0; y < image_size; ++y)
        for (int x = 0; x < image_size; ++x)
          if (inside_shape(s, (x + 0.5) / image_size, (y + 0.5) / image_size))
            for (int c = 0; c < 3; ++c)
              img.at(c, y, x) = s.rgb[c];
      gt.add(s.box, 1.0, s.kind);
    }
    img.data = img.data.cwiseMax(0.0).cwiseMin(1.0);
    data[i] = {std::move(img), std::move(gt)};
  }
  return data;
}

CocoAnnotations parse_coco_annotations(const std::string &text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error &e) {
    throw CocoError(std::string("unparseable annotation document: ") + e.what());
  }
  const json &images = require(root, "images", "document");
  const json &annotations = require(root, "annotations", "document");
  const json &categories = require(root, "categories", "document");
  if (!images.is_array() || !annotations.is_array() || !categories.is_array())
    throw CocoError("\"images\", \"annotations\" and \"categories\" must be arrays");

  CocoAnnotations out;
  std::map<std::int64_t, int> category_index;
  for (const auto &c : categories) {
    const auto id = require(c, "id", "category").get<std::int64_t>();
    category_index.emplace(id, static_cast<int>(out.category_names.size()));
    out.category_names.push_back(c.value("name", std::to_string(id)));
  }

  std::map<std::int64_t, std::size_t> image_index;
  for (const auto &im : images) {
    CocoImageRecord rec;
    rec.id = require(im, "id", "image").get<std::int64_t>();
    rec.file_name = require(im, "file_name", "image").get<std::string>();
    rec.height = require(im, "height", "image").get<int>();
    rec.width = require(im, "width", "image").get<int>();
    if (rec.height < 1 || rec.width < 1)
      throw CocoError("image " + std::to_string(rec.id) + " has non-positive size");
    rec.ground_truth.image_height = rec.height;
    rec.ground_truth.image_width = rec.width;
    image_index.emplace(rec.id, out.images.size());
    out.images.push_back(std::move(rec));
  }

  for (const auto &a : annotations) {
    const auto image_id = require(a, "image_id", "annotation").get<std::int64_t>();
    const auto category_id = require(a, "category_id", "annotation").get<std::int64_t>();
    const json &bbox = require(a, "bbox", "annotation");
    auto it = image_index.find(image_id);
    if (it == image_index.end())
      throw CocoError("annotation references unknown image_id " + std::to_string(image_id));
    auto cat = category_index.find(category_id);
    if (cat == category_index.end())
      throw CocoError("annotation references unknown category_id " + std::to_string(category_id));
    if (!bbox.is_array() || bbox.size() != 4)
      throw CocoError("bbox must be [x, y, width, height]");
    const double x = bbox[0].get<double>(), y = bbox[1].get<double>();
    const double w = bbox[2].get<double>(), h = bbox[3].get<double>();
    CocoImageRecord &rec = out.images[it->second];
    if (!(w > 0.0 && h > 0.0)) {
      ++out.skipped_zero_area;
      continue;
    }
    const Box box{std::clamp(x / rec.width, 0.0, 1.0), std::clamp(y / rec.height, 0.0, 1.0),
                  std::clamp((x + w) / rec.width, 0.0, 1.0), std::clamp((y + h) / rec.height, 0.0, 1.0)};
    if (!(box.x_max > box.x_min && box.y_max > box.y_min)) {
      ++out.skipped_zero_area;
      continue;
    }
    rec.ground_truth.add(box, 1.0, cat->second);
  }
  if (out.skipped_zero_area > 0)
    spdlog::warn("skipped {} zero-area annotation(s)", out.skipped_zero_area);
  return out;
}

CocoAnnotations load_coco_annotations(const fs::path &path) { return parse_coco_annotations(read_file(path)); }

Dataset load_coco_samples(const CocoAnnotations &coco, const fs::path &image_root, int image_size) {
  Dataset data;
  data.reserve(coco.images.size());
  for (const auto &rec : coco.images) {
    Image img = read_image(image_root / rec.file_name);
    if (img.height != image_size || img.width != image_size)
      img = resize_bilinear(img, image_size, image_size);
    BoxSet gt = rec.ground_truth;
    gt.image_height = gt.image_width = image_size;
    data.push_back({std::move(img), std::move(gt)});
  }
  return data;
}

void export_dataset(const Dataset &data, const fs::path &dir, const std::vector<std::string> &category_names) {
  fs::create_directories(dir / "images");
  json images = json::array(), annotations = json::array(), categories = json::array();
  for (std::size_t k = 0; k < category_names.size(); ++k)
    categories.push_back({{"id", k + 1}, {"name", category_names[k]}});
  std::int64_t ann_id = 1;
  for (std::size_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06zu.ppm", i);
    const auto &s = data[i];
    write_ppm(s.image, dir / "images" / name);
    images.push_back({{"id", i + 1},
                      {"file_name", std::string("images/") + name},
                      {"height", s.image.height},
                      {"width", s.image.width}});
    for (std::size_t b = 0; b < s.ground_truth.size(); ++b) {
      const Box &box = s.ground_truth.boxes[b];
      const double x = box.x_min * s.image.width, y = box.y_min * s.image.height;
      const double w = box.width() * s.image.width, h = box.height() * s.image.height;
      annotations.push_back({{"id", ann_id++},
                             {"image_id", i + 1},
                             {"category_id", s.ground_truth.label(b) + 1},
                             {"bbox", {x, y, w, h}},
                             {"area", w * h},
                             {"iscrowd", 0}});
    }
  }
  std::ofstream out(dir / "annotations.json");
  out << json{{"images", images}, {"annotations", annotations}, {"categories", categories}}.dump(1) << "\n";
}

Dataset load_dataset(const fs::path &path, int image_size) {
  const fs::path doc = fs::is_directory(path) ? path / "annotations.json" : path;
  const CocoAnnotations coco = load_coco_annotations(doc);
  return load_coco_samples(coco, doc.parent_path(), image_size);
}

void write_ppm(const Image &image, const fs::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c)
        out.put(static_cast<char>(std::lround(std::clamp(image.at(c, y, x), 0.0, 1.0) * 255.0)));
}

void write_pgm(const Eigen::MatrixXd &gray, const fs::path &path) {
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << gray.cols() << " " << gray.rows() << "\n255\n";
  for (Eigen::Index y = 0; y < gray.rows(); ++y)
    for (Eigen::Index x = 0; x < gray.cols(); ++x)
      out.put(static_cast<char>(std::lround(std::clamp(gray(y, x), 0.0, 1.0) * 255.0)));
}

Image read_image(const fs::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open image " + path.string());
  std::string magic;
  in >> magic;
  auto next_int = [&]() {
    int v = 0;
    for (;;) {
      in >> std::ws;
      if (in.peek() == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (!(in >> v))
        throw std::runtime_error("malformed image header in " + path.string());
      return v;
    }
  };
  if (magic != "P2" && magic != "P3" && magic != "P5" && magic != "P6")
    throw std::runtime_error("unsupported image format in " + path.string() + " (expected PPM/PGM)");
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
    throw std::runtime_error("unsupported image geometry in " + path.string());
  const bool color = magic == "P3" || magic == "P6";
  const bool binary = magic == "P5" || magic == "P6";
  if (binary)
    in.get();
  Image img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < (color ? 3 : 1); ++c) {
        int v;
        if (binary) {
          const int ch = in.get();
          if (ch == EOF)
            throw std::runtime_error("truncated image " + path.string());
          v = ch;
        } else {
          v = next_int();
        }
        const double val = static_cast<double>(v) / maxval;
        if (color)
          img.at(c, y, x) = val;
        else
          for (int k = 0; k < 3; ++k)
            img.at(k, y, x) = val;
      }
  return img;
}

} // namespace dfmsd
