#pragma once

#include <string>

#include "hydisc/tensor.hpp"

namespace hydisc {

enum class Modality { text, audio, visual };
enum class Provenance { real, fake };

std::string to_string(Modality m);
std::string to_string(Provenance p);

// A length-L feature sequence plus its <CLS> summary row. Provenance is set
// at construction and cannot be relabelled: real sequences come from data,
// fake ones only from a generator.
class FeatureSequence {
 public:
  FeatureSequence() = default;

  // Real sequence; cls defaults to the column mean of the body.
  static FeatureSequence real(Modality m, Tensor body);
  static FeatureSequence real_with_cls(Modality m, Tensor body, Tensor cls);
  // Only generators produce fake sequences.
  static FeatureSequence fake(Modality m, Tensor body, Tensor cls);

  bool defined() const { return body_.defined(); }
  Modality modality() const { return modality_; }
  Provenance provenance() const { return provenance_; }
  int length() const { return body_.rows(); }
  int dim() const { return body_.cols(); }

  const Tensor& body() const { return body_; }
  const Tensor& cls() const { return cls_; }
  // Body with the cls row appended: (L+1) x d.
  Tensor with_cls() const;

 private:
  FeatureSequence(Modality m, Provenance p, Tensor body, Tensor cls);
  Modality modality_ = Modality::text;
  Provenance provenance_ = Provenance::real;
  Tensor body_;
  Tensor cls_;
};

// Average pooling over sequence positions; the standard <CLS> initializer.
Tensor init_cls(const Tensor& body);

}  // namespace hydisc
