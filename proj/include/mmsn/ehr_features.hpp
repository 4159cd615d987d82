#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "mmsn/dataset.hpp"

namespace mmsn {

/// Tabular features, in canonical concatenation order.
enum class EhrFeature { age = 0, sex, view, pos, icu, mort };
inline constexpr int kNumEhrFeatures = 6;

const char* to_string(EhrFeature f);
int feature_dim(EhrFeature f);  // age 1, sex 2, view 4, pos 2, icu 2, mort 2

/// A set of features; named bundles D={age,sex}, SM={view,pos}, SI={icu,mort}
/// and '+'-joined unions of any tokens are accepted.
struct FeatureGroupSpec {
  std::array<bool, kNumEhrFeatures> included{};

  static FeatureGroupSpec parse(const std::string& text);  // throws UnknownFeatureGroup
  static FeatureGroupSpec all();

  bool contains(EhrFeature f) const { return included[static_cast<std::size_t>(f)]; }
  void add(EhrFeature f) { included[static_cast<std::size_t>(f)] = true; }
  bool empty() const;
  int dimension() const;
  std::string name() const;  // canonical '+'-joined feature names
  std::vector<EhrFeature> features() const;

  bool operator==(const FeatureGroupSpec&) const = default;
};

/// MinMax-normalized age: (age - 18) / (100 - 18).
double encode_age(int age);

/// One-hot over an ordered vocabulary; exactly one 1 at the value's index.
Eigen::VectorXd encode_onehot(int value_index, int vocabulary_size);

/// Concatenates the encoded features of `spec` in canonical order.
Eigen::VectorXd assemble(const EhrRecord& record, const FeatureGroupSpec& spec);

}  // namespace mmsn
