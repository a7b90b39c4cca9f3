#pragma once

#include "dfmsd/types.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace dfmsd {

struct DetectionSample {
  Image image;
  BoxSet ground_truth; ///< scores are 1, labels are class indices
};

using Dataset = std::vector<DetectionSample>;

/**
 * Colored shapes (rectangles, ellipses, triangles; class = shape kind) on
 * textured 1/f backgrounds.
 *
 * `size_mix` is the fraction of small-object images (summed GT area < 0.5);
 * the rest are large-object images (summed GT area >= 0.5).
 */
Dataset synth_dataset(int n, int image_size, double size_mix, std::uint64_t seed);

inline constexpr int kSynthClasses = 3;

class CocoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct CocoImageRecord {
  std::int64_t id = 0;
  std::string file_name;
  int height = 0;
  int width = 0;
  BoxSet ground_truth; ///< normalized corner boxes, labels are category indices
};

struct CocoAnnotations {
  std::vector<CocoImageRecord> images;
  std::vector<std::string> category_names;
  int skipped_zero_area = 0;
};

/// Reads a COCO-style document ("images", "annotations", "categories";
/// "bbox" as [x, y, width, height] pixels). Category ids map to indices in
/// the order of the "categories" array.
CocoAnnotations load_coco_annotations(const std::filesystem::path &path);
CocoAnnotations parse_coco_annotations(const std::string &text);

/// Loads every referenced image (relative to `image_root`), resizing to
/// `image_size` when it differs.
Dataset load_coco_samples(const CocoAnnotations &coco, const std::filesystem::path &image_root,
                          int image_size);

/// Writes images/NNNNNN.ppm and annotations.json under `dir`.
void export_dataset(const Dataset &data, const std::filesystem::path &dir,
                    const std::vector<std::string> &category_names);

/// Either a COCO annotation file or a directory holding annotations.json.
Dataset load_dataset(const std::filesystem::path &path, int image_size);

/// Binary PPM (P6) / PGM (P5) I/O with 8-bit samples.
void write_ppm(const Image &image, const std::filesystem::path &path);
void write_pgm(const Eigen::MatrixXd &gray, const std::filesystem::path &path);
Image read_image(const std::filesystem::path &path);

} // namespace dfmsd
