#include "hydisc/features.hpp"

namespace hydisc {

std::string to_string(Modality m) {
  switch (m) {
    case Modality::text: return "text";
    case Modality::audio: return "audio";
    case Modality::visual: return "visual";
  }
  return "?";
}

std::string to_string(Provenance p) {
  return p == Provenance::real ? "real" : "fake";
}

Tensor init_cls(const Tensor& body) { return mean_rows(body); }

FeatureSequence::FeatureSequence(Modality m, Provenance p, Tensor body, Tensor cls)
    : modality_(m), provenance_(p), body_(std::move(body)), cls_(std::move(cls)) {
  if (!body_.defined() || !cls_.defined()) {
    throw ContractError("FeatureSequence: undefined body or cls");
  }
  if (cls_.rows() != 1 || cls_.cols() != body_.cols()) {
    throw DimensionError("FeatureSequence: cls " + cls_.shape_str() + " does not match body " +
                         body_.shape_str());
  }
}

FeatureSequence FeatureSequence::real(Modality m, Tensor body) {
  Tensor cls = init_cls(body);
  return FeatureSequence(m, Provenance::real, std::move(body), std::move(cls));
}

FeatureSequence FeatureSequence::real_with_cls(Modality m, Tensor body, Tensor cls) {
  return FeatureSequence(m, Provenance::real, std::move(body), std::move(cls));
}

FeatureSequence FeatureSequence::fake(Modality m, Tensor body, Tensor cls) {
  return FeatureSequence(m, Provenance::fake, std::move(body), std::move(cls));
}

Tensor FeatureSequence::with_cls() const {
  const Tensor parts[] = {body_, cls_};
  return concat_rows(parts);
}

}  // namespace hydisc
