#include "dfmsd/dataset.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace dfmsd;
namespace fs = std::filesystem;

namespace {

double summed_area(const BoxSet &b) {
  double a = 0;
  for (const auto &box : b.boxes)
    a += box.area();
  return a;
}

fs::path scratch(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / "dfmsd_test_dataset" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

const char *kCoco = R"({
  "images": [{"id": 7, "file_name": "a.ppm", "height": 100, "width": 100},
             {"id": 8, "file_name": "b.ppm", "height": 50, "width": 200}],
  "annotations": [
    {"id": 1, "image_id": 7, "category_id": 3, "bbox": [10, 10, 20, 20]},
    {"id": 2, "image_id": 7, "category_id": 3, "bbox": [5, 5, 0, 10]},
    {"id": 3, "image_id": 8, "category_id": 9, "bbox": [20, 5, 100, 25]}],
  "categories": [{"id": 9, "name": "nine"}, {"id": 3, "name": "three"}]
})";

} // namespace

TEST_CASE("size_mix selects the object-size regime") {
  for (const auto &s : synth_dataset(20, 64, 0.0, 1))
    CHECK(summed_area(s.ground_truth) >= 0.5);
  for (const auto &s : synth_dataset(20, 64, 1.0, 1))
    CHECK(summed_area(s.ground_truth) < 0.5);
  int small = 0;
  for (const auto &s : synth_dataset(20, 64, 0.5, 1))
    small += summed_area(s.ground_truth) < 0.5;
  CHECK(small == 10);
}

TEST_CASE("synthetic samples are valid and deterministic") {
  const Dataset a = synth_dataset(8, 32, 0.5, 4), b = synth_dataset(8, 32, 0.5, 4), c = synth_dataset(8, 32, 0.5, 5);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].ground_truth.boxes == b[i].ground_truth.boxes);
    CHECK(a[i].ground_truth.labels == b[i].ground_truth.labels);
    differs |= !(a[i].image == c[i].image);
    CHECK(a[i].image.data.minCoeff() >= 0.0);
    CHECK(a[i].image.data.maxCoeff() <= 1.0);
    CHECK(a[i].ground_truth.size() >= 1);
    for (std::size_t k = 0; k < a[i].ground_truth.size(); ++k) {
      const Box &box = a[i].ground_truth.boxes[k];
      CHECK(box.x_min >= 0.0);
      CHECK(box.y_max <= 1.0);
      CHECK(box.x_min < box.x_max);
      CHECK(a[i].ground_truth.label(k) < kSynthClasses);
    }
  }
  CHECK(differs);
  CHECK_THROWS_AS(synth_dataset(0, 32, 0.5, 0), std::invalid_argument);
}

TEST_CASE("COCO boxes are normalized and zero-area boxes skipped") {
  const CocoAnnotations c = parse_coco_annotations(kCoco);
  REQUIRE(c.images.size() == 2);
  CHECK(c.skipped_zero_area == 1);
  CHECK(c.category_names == std::vector<std::string>{"nine", "three"});
  const BoxSet &g = c.images[0].ground_truth;
  REQUIRE(g.size() == 1);
  CHECK(g.boxes[0].x_min == doctest::Approx(0.1));
  CHECK(g.boxes[0].y_min == doctest::Approx(0.1));
  CHECK(g.boxes[0].x_max == doctest::Approx(0.3));
  CHECK(g.boxes[0].y_max == doctest::Approx(0.3));
  CHECK(g.label(0) == 1);
  const BoxSet &h = c.images[1].ground_truth;
  CHECK(h.boxes[0].x_min == doctest::Approx(0.1));
  CHECK(h.boxes[0].y_max == doctest::Approx(0.6));
  CHECK(h.label(0) == 0);
}

TEST_CASE("COCO edge cases") {
  const CocoAnnotations empty = parse_coco_annotations(R"({"images": [], "annotations": [], "categories": []})");
  CHECK(empty.images.empty());
  CHECK_THROWS_AS(parse_coco_annotations(R"({"images": [], "categories": []})"), CocoError);
  CHECK_THROWS_AS(parse_coco_annotations("{not json"), CocoError);
  CHECK_THROWS_AS(parse_coco_annotations(R"({"images": [], "categories": [{"id": 1, "name": "x"}],
      "annotations": [{"image_id": 4, "category_id": 1, "bbox": [0, 0, 1, 1]}]})"),
                  CocoError);
  CHECK_THROWS_AS(load_coco_annotations("/nonexistent/annotations.json"), CocoError);
}

TEST_CASE("export and reload reproduce the dataset") {
  const Dataset data = synth_dataset(3, 32, 0.5, 2);
  const fs::path dir = scratch("export");
  export_dataset(data, dir, {"rect", "ellipse", "triangle"});
  const Dataset back = load_dataset(dir, 32);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK((back[i].image.data - data[i].image.data).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);
    REQUIRE(back[i].ground_truth.size() == data[i].ground_truth.size());
    for (std::size_t k = 0; k < data[i].ground_truth.size(); ++k) {
      CHECK(iou(back[i].ground_truth.boxes[k], data[i].ground_truth.boxes[k]) > 1.0 - 1e-9);
      CHECK(back[i].ground_truth.label(k) == data[i].ground_truth.label(k));
    }
  }
  CHECK(load_dataset(dir / "annotations.json", 16)[0].image.height == 16);
}

TEST_CASE("PPM and PGM files round trip at 8 bits") {
  const fs::path dir = scratch("io");
  Image img(5, 7);
  for (Eigen::Index i = 0; i < img.data.size(); ++i)
    img.data(i) = static_cast<double>(i % 256) / 255.0;
  write_ppm(img, dir / "x.ppm");
  CHECK((read_image(dir / "x.ppm").data - img.data).cwiseAbs().maxCoeff() < 1e-12);

  Eigen::MatrixXd gray(3, 4);
  gray << 0, 1, 0.5, 0.25, 1, 1, 0, 0, 0.2, 0.4, 0.6, 0.8;
  write_pgm(gray, dir / "g.pgm");
  const Image g = read_image(dir / "g.pgm");
  CHECK(g.height == 3);
  CHECK(g.width == 4);
  CHECK((g.gray() - gray).cwiseAbs().maxCoeff() <= 0.5 / 255.0 + 1e-12);

  std::ofstream(dir / "ascii.ppm") << "P3\n1 1\n255\n255 0 51\n";
  CHECK(read_image(dir / "ascii.ppm").at(2, 0, 0) == doctest::Approx(0.2));
  std::ofstream(dir / "short.ppm", std::ios::binary) << "P6\n2 2\n255\n" << std::string(5, '\x10');
  CHECK_THROWS(read_image(dir / "short.ppm"));
  std::ofstream(dir / "bad.ppm") << "P7\n1 1\n255\n";
  CHECK_THROWS(read_image(dir / "bad.ppm"));
  CHECK_THROWS(read_image(dir / "none.ppm"));
}
