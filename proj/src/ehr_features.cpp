#include "mmsn/ehr_features.hpp"

#include <sstream>

#include "mmsn/common.hpp"

namespace mmsn {

const char* to_string(EhrFeature f) {
  switch (f) {
    case EhrFeature::age: return "age";
    case EhrFeature::sex: return "sex";
    case EhrFeature::view: return "view";
    case EhrFeature::pos: return "pos";
    case EhrFeature::icu: return "icu";
    case EhrFeature::mort: return "mort";
  }
  return "?";
}

int feature_dim(EhrFeature f) {
  switch (f) {
    case EhrFeature::age: return 1;
    case EhrFeature::sex: return 2;
    case EhrFeature::view: return 4;
    case EhrFeature::pos: return 2;
    case EhrFeature::icu: return 2;
    case EhrFeature::mort: return 2;
  }
  return 0;
}

FeatureGroupSpec FeatureGroupSpec::parse(const std::string& text) {
  FeatureGroupSpec spec;
  std::istringstream ss(text);
  std::string token;
  bool any = false;
  while (std::getline(ss, token, '+')) {
    any = true;
    if (token == "age") spec.add(EhrFeature::age);
    else if (token == "sex") spec.add(EhrFeature::sex);
    else if (token == "view") spec.add(EhrFeature::view);
    else if (token == "pos") spec.add(EhrFeature::pos);
    else if (token == "icu") spec.add(EhrFeature::icu);
    else if (token == "mort") spec.add(EhrFeature::mort);
    else if (token == "D") { spec.add(EhrFeature::age); spec.add(EhrFeature::sex); }
    else if (token == "SM") { spec.add(EhrFeature::view); spec.add(EhrFeature::pos); }
    else if (token == "SI") { spec.add(EhrFeature::icu); spec.add(EhrFeature::mort); }
    else fail("UnknownFeatureGroup", "unknown feature token '" + token + "' in '" + text + "'");
  }
  require(any, "UnknownFeatureGroup", "empty feature group '" + text + "'");
  return spec;
}

FeatureGroupSpec FeatureGroupSpec::all() {
  FeatureGroupSpec spec;
  spec.included.fill(true);
  return spec;
}

bool FeatureGroupSpec::empty() const {
  for (bool b : included) {
    if (b) return false;
  }
  return true;
}

int FeatureGroupSpec::dimension() const {
  int d = 0;
  for (EhrFeature f : features()) d += feature_dim(f);
  return d;
}

std::string FeatureGroupSpec::name() const {
  std::string out;
  for (EhrFeature f : features()) {
    if (!out.empty()) out += '+';
    out += to_string(f);
  }
  return out;
}

std::vector<EhrFeature> FeatureGroupSpec::features() const {
  std::vector<EhrFeature> fs;
  for (int i = 0; i < kNumEhrFeatures; ++i) {
    if (included[static_cast<std::size_t>(i)]) fs.push_back(static_cast<EhrFeature>(i));
  }
  return fs;
}

double encode_age(int age) {
  require(age >= kAgeMin && age <= kAgeMax, "AgeOutOfRange",
          "age " + std::to_string(age) + " outside [18,100]");
  return static_cast<double>(age - kAgeMin) / static_cast<double>(kAgeMax - kAgeMin);
}

Eigen::VectorXd encode_onehot(int value_index, int vocabulary_size) {
  require(vocabulary_size >= 1, "UnknownValue", "empty vocabulary");
  require(value_index >= 0 && value_index < vocabulary_size, "UnknownValue",
          "value index " + std::to_string(value_index) + " outside vocabulary of size " +
              std::to_string(vocabulary_size));
  Eigen::VectorXd v = Eigen::VectorXd::Zero(vocabulary_size);
  v(value_index) = 1.0;
  return v;
}

Eigen::VectorXd assemble(const EhrRecord& record, const FeatureGroupSpec& spec) {
  require(!spec.empty(), "UnknownFeatureGroup", "feature group is empty");
  record.validate();

  Eigen::VectorXd out(spec.dimension());
  int offset = 0;
  auto put = [&](const Eigen::VectorXd& block) {
    out.segment(offset, block.size()) = block;
    offset += static_cast<int>(block.size());
  };
  for (EhrFeature f : spec.features()) {
    switch (f) {
      case EhrFeature::age:
        out(offset++) = encode_age(record.age);
        break;
      case EhrFeature::sex:
        put(encode_onehot(static_cast<int>(record.sex), 2));
        break;
      case EhrFeature::view:
        put(encode_onehot(static_cast<int>(record.view), 4));
        break;
      case EhrFeature::pos:
        put(encode_onehot(static_cast<int>(record.position), 2));
        break;
      case EhrFeature::icu:
        put(encode_onehot(static_cast<int>(record.icu_admission), 2));
        break;
      case EhrFeature::mort:
        put(encode_onehot(static_cast<int>(record.in_hospital_mortality), 2));
        break;
    }
  }
  return out;
}

}  // namespace mmsn
