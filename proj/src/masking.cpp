#include "dfmsd/masking.hpp"

namespace dfmsd {

nn::Var to_var(const FeatureMapd &feat, bool requires_grad) {
  return nn::Var::leaf(feat.data, nn::Shape{feat.channels, feat.height, feat.width}, requires_grad);
}

FeatureMapd to_feature(const nn::Var &v, int level_id) {
  const nn::Shape s = v.shape();
  return FeatureMapd(v.value(), s.channels, s.height, s.width, level_id);
}

FeatureMapd reconstruct(const nn::GenerationBlock &block, const FeatureMapd &masked) {
  return to_feature(block(to_var(masked)), masked.level_id);
}

FeatureMapd projection_phi(const nn::Projection &phi, const FeatureMapd &student) {
  return to_feature(phi(to_var(student)), student.level_id);
}

MaskedReconstructor::MaskedReconstructor(int levels, int student_channels, int teacher_channels,
                                         std::uint64_t seed)
    : student_channels_(student_channels), teacher_channels_(teacher_channels) {
  Rng rng(derive_seed(seed, {0x6d61736bULL}));
  for (int l = 0; l < levels; ++l) {
    const std::string p = "distill.l" + std::to_string(l);
    projections_.emplace_back(p + ".phi", student_channels, teacher_channels, rng);
    generators_.emplace_back(p + ".gen", teacher_channels, rng);
  }
}

nn::Var MaskedReconstructor::reconstruct(int level, const nn::Var &projected, const DualMask &mask) const {
  return generators_.at(level)(nn::mul_constant(projected, expand_mask(mask)));
}

nn::ParameterList MaskedReconstructor::parameters() {
  nn::ParameterList out;
  for (std::size_t l = 0; l < projections_.size(); ++l) {
    projections_[l].collect(out);
    generators_[l].collect(out);
  }
  return out;
}

} // namespace dfmsd
