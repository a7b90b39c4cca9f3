#pragma once

#include "dfmsd/alignment.hpp"
#include "dfmsd/types.hpp"

#include <stdexcept>

namespace dfmsd {

/// Scalar decomposition of the training objective.
struct LossBreakdown {
  double gt = 0;
  double distill = 0; ///< already includes beta * me
  double me = 0;
  double total = 0;
};

/**
 * Feature distillation loss: sum over levels of the squared error between
 * teacher and projected student, each level normalized by its C*H*W.
 */
template <typename Scalar>
Scalar feature_distill_loss(const FeaturePyramid<Scalar> &teacher,
                            const FeaturePyramid<Scalar> &projected_student) {
  if (teacher.size() != projected_student.size())
    throw ShapeError("feature_distill_loss: pyramid length mismatch");
  Scalar total = 0;
  for (std::size_t l = 0; l < teacher.size(); ++l)
    total += normalized_mse(teacher[l], projected_student[l]);
  return total;
}

/**
 * Stage distillation term: normalized reconstruction error of the masked,
 * regenerated student against the teacher, plus beta times the
 * masking-enhancement term.
 */
template <typename Scalar>
Scalar masked_distill_loss(const FeaturePyramid<Scalar> &teacher,
                           const FeaturePyramid<Scalar> &reconstructed_student, Scalar me_term,
                           Scalar beta) {
  if (beta < Scalar(0))
    throw std::invalid_argument("masked_distill_loss: beta must be >= 0");
  return feature_distill_loss(teacher, reconstructed_student) + beta * me_term;
}

/// Masking-enhancement loss on the augmented input: the feature distillation
/// kernel applied to enhanced teacher features and masked, projected student features.
template <typename Scalar>
Scalar me_loss(const FeaturePyramid<Scalar> &teacher_enhanced,
               const FeaturePyramid<Scalar> &student_enhanced_masked) {
  return feature_distill_loss(teacher_enhanced, student_enhanced_masked);
}

inline LossBreakdown total_loss(double gt, double distill, double alpha, double me = 0.0) {
  if (alpha < 0)
    throw std::invalid_argument("total_loss: alpha must be >= 0");
  return {gt, distill, me, gt + alpha * distill};
}

} // namespace dfmsd
