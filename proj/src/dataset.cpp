#include "mmsn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "mmsn/common.hpp"
#include "mmsn/rng.hpp"

namespace mmsn {

const std::array<std::string, kNumLabels>& condition_names() {
  static const std::array<std::string, kNumLabels> names = {
      "Atelectasis",    "Cardiomegaly", "Consolidation",  "Edema",
      "Enlarged Cardiomediastinum",     "Fracture",       "Lung Lesion",
      "Lung Opacity",   "Pleural Effusion",               "Pneumonia",
      "Pneumothorax",   "Pleural Other",                  "Support Devices",
      "No Finding"};
  return names;
}

const char* to_string(Sex v) { return v == Sex::Male ? "Male" : "Female"; }

const char* to_string(ScanView v) {
  switch (v) {
    case ScanView::AP: return "AP";
    case ScanView::L: return "L";
    case ScanView::PA: return "PA";
    case ScanView::LL: return "LL";
  }
  return "?";
}

const char* to_string(PatientPosition v) {
  return v == PatientPosition::Erect ? "Erect" : "Recumbent";
}

const char* to_string(BinaryOutcome v) {
  return v == BinaryOutcome::Negative ? "Negative" : "Positive";
}

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

int LabelVector::count() const {
  int n = 0;
  for (auto v : values) n += v;
  return n;
}

void EhrRecord::validate() const {
  require(age >= kAgeMin && age <= kAgeMax, "AgeOutOfRange",
          "age " + std::to_string(age) + " outside [" + std::to_string(kAgeMin) + "," +
              std::to_string(kAgeMax) + "]");
}

std::string default_image_relpath(const std::string& sample_id) {
  return "images/" + sample_id + ".png";
}

std::filesystem::path DatasetManifest::resolve_image(const ManifestEntry& e) const {
  std::filesystem::path p(e.image_path);
  if (p.is_absolute()) return p;
  return base_dir / p;
}

namespace {

const std::vector<std::string>& manifest_header() {
  static const std::vector<std::string> cols = [] {
    std::vector<std::string> c = {"sample_id", "patient_id", "image_path", "age", "sex",
                                  "view",      "position",   "icu",        "mortality"};
    for (int i = 0; i < kNumLabels; ++i) c.push_back("l" + std::to_string(i));
    return c;
  }();
  return cols;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename Enum>
Enum parse_enum(const std::string& text, std::initializer_list<Enum> values, std::size_t row,
                const std::string& field) {
  for (Enum v : values) {
    if (text == to_string(v)) return v;
  }
  fail("InvalidEnumValue",
       "row " + std::to_string(row) + ", field '" + field + "': unknown value '" + text + "'");
}

}  // namespace

DatasetManifest load_manifest(const std::filesystem::path& path, Split split) {
  std::ifstream in(path);
  require(in.good(), "IoError", "cannot open manifest: " + path.string());

  std::string line;
  require(static_cast<bool>(std::getline(in, line)), "MissingColumn", "empty manifest file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_csv_line(line);
  const auto& expected = manifest_header();
  for (const auto& col : expected) {
    if (std::find(header.begin(), header.end(), col) == header.end()) {
      fail("MissingColumn", "manifest header lacks column '" + col + "'");
    }
  }
  require(header == expected, "MissingColumn",
          "manifest header columns must be exactly: sample_id,patient_id,image_path,age,sex,"
          "view,position,icu,mortality,l0,...,l13");

  DatasetManifest manifest;
  manifest.split = split;
  manifest.base_dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");

  std::set<std::string> seen_ids;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    require(fields.size() == expected.size(), "MissingColumn",
            "row " + std::to_string(row) + ": expected " + std::to_string(expected.size()) +
                " fields, got " + std::to_string(fields.size()));

    ManifestEntry e;
    e.sample_id = fields[0];
    e.patient_id = fields[1];
    e.image_path = fields[2];
    require(!e.patient_id.empty(), "InvalidEnumValue",
            "row " + std::to_string(row) + ": empty patient_id");
    if (!seen_ids.insert(e.sample_id).second) {
      fail("DuplicateSampleId", "row " + std::to_string(row) + ": sample_id '" + e.sample_id +
                                    "' appears twice");
    }

    try {
      std::size_t pos = 0;
      e.ehr.age = std::stoi(fields[3], &pos);
      if (pos != fields[3].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      fail("AgeOutOfRange", "row " + std::to_string(row) + ": age '" + fields[3] +
                                "' is not an integer");
    }
    require(e.ehr.age >= kAgeMin && e.ehr.age <= kAgeMax, "AgeOutOfRange",
            "row " + std::to_string(row) + ": age " + fields[3] + " outside [18,100]");

    e.ehr.sex = parse_enum(fields[4], {Sex::Male, Sex::Female}, row, "sex");
    e.ehr.view =
        parse_enum(fields[5], {ScanView::AP, ScanView::L, ScanView::PA, ScanView::LL}, row, "view");
    e.ehr.position =
        parse_enum(fields[6], {PatientPosition::Erect, PatientPosition::Recumbent}, row, "position");
    e.ehr.icu_admission =
        parse_enum(fields[7], {BinaryOutcome::Negative, BinaryOutcome::Positive}, row, "icu");
    e.ehr.in_hospital_mortality =
        parse_enum(fields[8], {BinaryOutcome::Negative, BinaryOutcome::Positive}, row, "mortality");

    for (int i = 0; i < kNumLabels; ++i) {
      const std::string& v = fields[static_cast<std::size_t>(9 + i)];
      if (v == "0") {
        e.labels.values[static_cast<std::size_t>(i)] = 0;
      } else if (v == "1") {
        e.labels.values[static_cast<std::size_t>(i)] = 1;
      } else {
        fail("InvalidEnumValue", "row " + std::to_string(row) + ", field 'l" + std::to_string(i) +
                                     "': labels must be 0 or 1, got '" + v + "'");
      }
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), "IoError", "cannot write manifest: " + path.string());
  const auto& cols = manifest_header();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out << cols[i] << (i + 1 < cols.size() ? "," : "\n");
  }
  for (const auto& e : manifest.entries) {
    out << e.sample_id << ',' << e.patient_id << ',' << e.image_path << ',' << e.ehr.age << ','
        << to_string(e.ehr.sex) << ',' << to_string(e.ehr.view) << ',' << to_string(e.ehr.position)
        << ',' << to_string(e.ehr.icu_admission) << ',' << to_string(e.ehr.in_hospital_mortality);
    for (int i = 0; i < kNumLabels; ++i) {
      out << ',' << static_cast<int>(e.labels.values[static_cast<std::size_t>(i)]);
    }
    out << '\n';
  }
  require(out.good(), "IoError", "write failed: " + path.string());
}

SplitManifests split_by_patient(const std::vector<Sample>& samples,
                                const std::array<double, 3>& fractions, std::uint64_t seed) {
  const double sum = fractions[0] + fractions[1] + fractions[2];
  require(std::abs(sum - 1.0) <= 1e-9, "InvalidArgument", "split fractions must sum to 1");

  // Ordered map keeps the patient list independent of sample order quirks.
  std::map<std::string, std::vector<std::size_t>> by_patient;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    require(!samples[i].patient_id.empty(), "InvalidArgument", "sample with empty patient_id");
    by_patient[samples[i].patient_id].push_back(i);
  }
  const int n_patients = static_cast<int>(by_patient.size());
  require(n_patients >= 3, "TooFewPatients",
          "need at least 3 distinct patients, got " + std::to_string(n_patients));

  std::vector<std::string> patients;
  patients.reserve(by_patient.size());
  for (const auto& [pid, _] : by_patient) patients.push_back(pid);
  Prng rng(derive_seed(seed, "split_by_patient"));
  rng.shuffle(patients);

  const int n_train = static_cast<int>(std::lround(fractions[0] * n_patients));
  const int n_val = static_cast<int>(std::lround((fractions[0] + fractions[1]) * n_patients)) - n_train;

  SplitManifests out;
  out.train.split = Split::train;
  out.val.split = Split::val;
  out.test.split = Split::test;
  for (int p = 0; p < n_patients; ++p) {
    DatasetManifest& dst = p < n_train ? out.train : (p < n_train + n_val ? out.val : out.test);
    for (std::size_t idx : by_patient[patients[static_cast<std::size_t>(p)]]) {
      const Sample& s = samples[idx];
      ManifestEntry e;
      e.sample_id = s.sample_id;
      e.patient_id = s.patient_id;
      e.image_path = default_image_relpath(s.sample_id);
      e.ehr = s.ehr;
      e.labels = s.labels;
      dst.entries.push_back(std::move(e));
    }
  }
  return out;
}

DatasetManifest subsample_fraction(const DatasetManifest& manifest, double fraction,
                                   std::uint64_t seed) {
  require(fraction > 0.0 && fraction <= 1.0, "InvalidArgument", "fraction must be in (0,1]");
  const int n = static_cast<int>(manifest.entries.size());
  require(n > 0, "EmptyResult", "cannot subsample an empty manifest");
  const int k = static_cast<int>(std::ceil(fraction * n));

  Prng rng(derive_seed(seed, "subsample_fraction"));
  const auto idx = rng.sample_without_replacement(n, k);

  DatasetManifest out;
  out.split = manifest.split;
  out.base_dir = manifest.base_dir;
  out.entries.reserve(idx.size());
  for (int i : idx) out.entries.push_back(manifest.entries[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace mmsn
