#pragma once

#include "dfmsd/config.hpp"
#include "dfmsd/types.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace dfmsd {

/// Radial band edges as fractions of the Nyquist radius.
struct BandEdges {
  double low = 0.125;
  double high = 0.5;
};

/**
 * Power spectrum of a grayscale image, DC at (H/2, W/2).
 *
 * `magnitude` holds |X|^2 / (H*W) so that its sum equals the spatial-domain
 * energy. Bands: "low" r < low, "mid" low <= r < high, "high" r >= high,
 * where r is the radial frequency over the Nyquist frequency.
 */
struct Spectrum {
  Eigen::MatrixXd magnitude;
  double total_energy = 0;
  std::map<std::string, double> band_energies;

  double fraction(const std::string &band) const { return band_energies.at(band) / total_energy; }
};

Spectrum dft_spectrum(const Eigen::MatrixXd &gray, BandEdges edges = {});

/// log(1 + magnitude) rescaled to [0,1], for display.
Eigen::MatrixXd log_magnitude_image(const Spectrum &s);

/// Summed (not unioned) area of boxes scoring at least `score_floor`.
double area_of_boxes(const BoxSet &boxes, double score_floor);

enum class AugmentBranch { big_object_crop, small_object_noise };

std::string to_string(AugmentBranch branch);

struct AugmentDecision {
  AugmentBranch branch = AugmentBranch::small_object_noise;
  double area_fraction = 0;
};

/// Crop when the area reaches the threshold, noise below it.
AugmentDecision select_augmentation(double area_fraction, double lambda_thresh);

/// With probability `prob` adds i.i.d. N(0, sigma^2) to every entry and
/// clips to [0,1]; otherwise returns the input.
Image apply_gaussian_noise(const Image &image, double sigma, double prob, std::uint64_t seed);

/// Crops a window whose per-side keep fraction is uniform in
/// [min_keep, max_keep] at a uniform anchor, then resizes back bilinearly.
Image apply_random_crop(const Image &image, double min_keep, double max_keep, std::uint64_t seed);

Image flip_horizontal(const Image &image);

/// Bilinear resize of every channel.
Image resize_bilinear(const Image &image, int out_h, int out_w);

/// Grayscale 1/f^exponent noise image rescaled to mean 0.5, replicated to RGB.
Image pink_noise_image(int height, int width, std::uint64_t seed, double exponent = 1.0);

struct EnhancedInput {
  Image image;
  AugmentDecision decision;
};

/// Area statistic -> branch selection -> chosen augmentation.
EnhancedInput enhance_input(const Image &image, const BoxSet &candidates, const DistillConfig &cfg,
                            std::uint64_t seed);

} // namespace dfmsd
