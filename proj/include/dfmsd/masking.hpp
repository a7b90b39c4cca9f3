#pragma once

#include "dfmsd/attention.hpp"
#include "dfmsd/nn/modules.hpp"
#include "dfmsd/types.hpp"

#include <vector>

namespace dfmsd {

nn::Var to_var(const FeatureMapd &feat, bool requires_grad = false);
FeatureMapd to_feature(const nn::Var &v, int level_id = 0);

/// Runs a generation block over a masked feature (inference path).
FeatureMapd reconstruct(const nn::GenerationBlock &block, const FeatureMapd &masked);

/// Applies a student-to-teacher channel projection (inference path).
FeatureMapd projection_phi(const nn::Projection &phi, const FeatureMapd &student);

/**
 * Trainable per-level distillation adapters: a channel projection followed
 * by masking and a generation block.
 *
 * Pipeline for level l: project -> mask (teacher attention) -> regenerate.
 */
class MaskedReconstructor {
public:
  MaskedReconstructor() = default;
  MaskedReconstructor(int levels, int student_channels, int teacher_channels, std::uint64_t seed);

  nn::Var project(int level, const nn::Var &student) const { return projections_.at(level)(student); }
  nn::Var reconstruct(int level, const nn::Var &projected, const DualMask &mask) const;

  nn::ParameterList parameters();
  int levels() const { return static_cast<int>(projections_.size()); }
  int teacher_channels() const { return teacher_channels_; }
  int student_channels() const { return student_channels_; }

private:
  std::vector<nn::Projection> projections_;
  std::vector<nn::GenerationBlock> generators_;
  int student_channels_ = 0;
  int teacher_channels_ = 0;
};

} // namespace dfmsd
