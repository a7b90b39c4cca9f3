#include "dfmsd/freq_augment.hpp"

#include "dfmsd/attention.hpp"
#include "dfmsd/random.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <random>
#include <stdexcept>

namespace dfmsd {

namespace {

using ComplexMatrix = Eigen::MatrixXcd;

ComplexMatrix dft_matrix(int n, bool inverse) {
  ComplexMatrix d(n, n);
  const double sign = inverse ? 1.0 : -1.0;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j) {
      // reduce k*j mod n first so the angle stays small and exact
      const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>((static_cast<long>(k) * j) % n) / n;
      d(k, j) = std::polar(1.0, angle);
    }
  return d;
}

ComplexMatrix dft2(const ComplexMatrix &x, bool inverse) {
  ComplexMatrix out = dft_matrix(static_cast<int>(x.rows()), inverse) * x *
                      dft_matrix(static_cast<int>(x.cols()), inverse).transpose();
  if (inverse)
    out /= static_cast<double>(x.size());
  return out;
}

/// Signed frequency index of bin i for an n-point transform.
int signed_frequency(int i, int n) { return i <= (n - 1) / 2 ? i : i - n; }

} // namespace

Spectrum dft_spectrum(const Eigen::MatrixXd &gray, BandEdges edges) {
  const int h = static_cast<int>(gray.rows()), w = static_cast<int>(gray.cols());
  if (h < 2 || w < 2)
    throw std::invalid_argument("dft_spectrum: image must be at least 2x2");
  const ComplexMatrix x = dft2(gray.cast<std::complex<double>>(), false);
  const double n = static_cast<double>(h) * w;

  Spectrum s;
  s.magnitude = Eigen::MatrixXd::Zero(h, w);
  s.band_energies = {{"low", 0.0}, {"mid", 0.0}, {"high", 0.0}};
  for (int ky = 0; ky < h; ++ky)
    for (int kx = 0; kx < w; ++kx) {
      const double power = std::norm(x(ky, kx)) / n;
      const int fy = signed_frequency(ky, h), fx = signed_frequency(kx, w);
      s.magnitude(fy + h / 2, fx + w / 2) = power;
      const double r = std::hypot(static_cast<double>(fy) / h, static_cast<double>(fx) / w) / 0.5;
      const char *band = r < edges.low ? "low" : (r < edges.high ? "mid" : "high");
      s.band_energies[band] += power;
      s.total_energy += power;
    }
  return s;
}

Eigen::MatrixXd log_magnitude_image(const Spectrum &s) {
  Eigen::MatrixXd img = s.magnitude.array().log1p().matrix();
  const double hi = img.maxCoeff(), lo = img.minCoeff();
  if (hi > lo)
    img = ((img.array() - lo) / (hi - lo)).matrix();
  else
    img.setZero();
  return img;
}

double area_of_boxes(const BoxSet &boxes, double score_floor) {
  if (!(score_floor >= 0.0 && score_floor <= 1.0))
    throw std::invalid_argument("area_of_boxes: score_floor outside [0,1]");
  double total = 0.0;
  for (std::size_t i = 0; i < boxes.size(); ++i)
    if (boxes.scores[i] >= score_floor)
      total += boxes.boxes[i].area();
  return total;
}

std::string to_string(AugmentBranch branch) {
  return branch == AugmentBranch::big_object_crop ? "big_object_crop" : "small_object_noise";
}

AugmentDecision select_augmentation(double area_fraction, double lambda_thresh) {
  if (!(lambda_thresh > 0.0))
    throw std::invalid_argument("select_augmentation: lambda must be > 0");
  return {area_fraction >= lambda_thresh ? AugmentBranch::big_object_crop : AugmentBranch::small_object_noise,
          area_fraction};
}

Image apply_gaussian_noise(const Image &image, double sigma, double prob, std::uint64_t seed) {
  if (!(sigma >= 0.0) || !(prob >= 0.0 && prob <= 1.0))
    throw std::invalid_argument("apply_gaussian_noise: need sigma >= 0 and prob in [0,1]");
  Rng rng(seed);
  if (sigma == 0.0 || !(uniform01(rng) < prob))
    return image;
  std::normal_distribution<double> noise(0.0, sigma);
  Image out = image;
  for (Eigen::Index i = 0; i < out.data.size(); ++i)
    out.data(i) = std::clamp(out.data(i) + noise(rng), 0.0, 1.0);
  return out;
}

Image resize_bilinear(const Image &image, int out_h, int out_w) {
  Image out(out_h, out_w);
  for (int c = 0; c < 3; ++c) {
    Eigen::MatrixXd plane(image.height, image.width);
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        plane(y, x) = image.at(c, y, x);
    const Eigen::MatrixXd r = resample_bilinear(plane, out_h, out_w);
    for (int y = 0; y < out_h; ++y)
      for (int x = 0; x < out_w; ++x)
        out.at(c, y, x) = r(y, x);
  }
  return out;
}

Image apply_random_crop(const Image &image, double min_keep, double max_keep, std::uint64_t seed) {
  if (!(min_keep > 0.0 && min_keep <= max_keep && max_keep <= 1.0))
    throw std::invalid_argument("apply_random_crop: need 0 < min_keep <= max_keep <= 1");
  Rng rng(seed);
  const double keep_h = uniform(rng, min_keep, max_keep);
  const double keep_w = uniform(rng, min_keep, max_keep);
  const int ch = std::clamp(static_cast<int>(std::lround(keep_h * image.height)), 1, image.height);
  const int cw = std::clamp(static_cast<int>(std::lround(keep_w * image.width)), 1, image.width);
  const int oy = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.height - ch + 1)));
  const int ox = static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(image.width - cw + 1)));

  Image crop(ch, cw);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < ch; ++y)
      for (int x = 0; x < cw; ++x)
        crop.at(c, y, x) = image.at(c, oy + y, ox + x);
  return resize_bilinear(crop, image.height, image.width);
}

Image flip_horizontal(const Image &image) {
  Image out(image.height, image.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x)
        out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

Image pink_noise_image(int height, int width, std::uint64_t seed, double exponent) {
  Rng rng(seed);
  std::normal_distribution<double> white(0.0, 1.0);
  ComplexMatrix field(height, width);
  for (Eigen::Index i = 0; i < field.size(); ++i)
    field(i) = white(rng);
  ComplexMatrix freq = dft2(field, false);
  for (int ky = 0; ky < height; ++ky)
    for (int kx = 0; kx < width; ++kx) {
      const double f = std::hypot(static_cast<double>(signed_frequency(ky, height)) / height,
                                  static_cast<double>(signed_frequency(kx, width)) / width);
      freq(ky, kx) *= f > 0.0 ? std::pow(f, -exponent) : 0.0;
    }
  Eigen::MatrixXd g = dft2(freq, true).real();
  const double mean = g.mean();
  const double sd = std::sqrt((g.array() - mean).square().mean());
  Image out(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double v = std::clamp(0.5 + 0.15 * (g(y, x) - mean) / std::max(sd, 1e-12), 0.0, 1.0);
      for (int c = 0; c < 3; ++c)
        out.at(c, y, x) = v;
    }
  return out;
}

EnhancedInput enhance_input(const Image &image, const BoxSet &candidates, const DistillConfig &cfg,
                            std::uint64_t seed) {
  const double area = area_of_boxes(candidates, cfg.augment.score_floor);
  const AugmentDecision decision = select_augmentation(area, cfg.lambda_thresh);
  if (decision.branch == AugmentBranch::big_object_crop)
    return {apply_random_crop(image, cfg.augment.crop_min_keep, cfg.augment.crop_max_keep, seed), decision};
  return {apply_gaussian_noise(image, cfg.sigma, cfg.augment.noise_prob, seed), decision};
}

} // namespace dfmsd
