#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mmsn/image.hpp"

namespace mmsn {

inline constexpr int kNumLabels = 14;

/// Canonical condition list; label index i corresponds to condition_names()[i].
const std::array<std::string, kNumLabels>& condition_names();

enum class Sex { Male, Female };
enum class ScanView { AP, L, PA, LL };
enum class PatientPosition { Erect, Recumbent };
enum class BinaryOutcome { Negative, Positive };

const char* to_string(Sex v);
const char* to_string(ScanView v);
const char* to_string(PatientPosition v);
const char* to_string(BinaryOutcome v);

inline constexpr int kAgeMin = 18;
inline constexpr int kAgeMax = 100;

/// 14 binary condition flags.
struct LabelVector {
  std::array<std::uint8_t, kNumLabels> values{};

  bool operator==(const LabelVector&) const = default;
  int count() const;
};

struct EhrRecord {
  int age = kAgeMin;
  Sex sex = Sex::Male;
  ScanView view = ScanView::AP;
  PatientPosition position = PatientPosition::Erect;
  BinaryOutcome icu_admission = BinaryOutcome::Negative;
  BinaryOutcome in_hospital_mortality = BinaryOutcome::Negative;

  bool operator==(const EhrRecord&) const = default;
  void validate() const;  // throws AgeOutOfRange
};

struct Sample {
  Image image;
  EhrRecord ehr;
  LabelVector labels;
  std::string patient_id;
  std::string sample_id;
};

enum class Split { train, val, test };
const char* to_string(Split s);

struct ManifestEntry {
  std::string sample_id;
  std::string patient_id;
  std::string image_path;
  EhrRecord ehr;
  LabelVector labels;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;
  Split split = Split::train;

  /// Directory manifest-relative image paths resolve against.
  std::filesystem::path base_dir;

  bool same_entries(const DatasetManifest& o) const { return entries == o.entries; }
  std::filesystem::path resolve_image(const ManifestEntry& e) const;
};

/// Conventional location of a sample's image relative to a dataset root.
std::string default_image_relpath(const std::string& sample_id);

/// CSV schema, exact header:
/// sample_id,patient_id,image_path,age,sex,view,position,icu,mortality,l0,...,l13
DatasetManifest load_manifest(const std::filesystem::path& path,
                              Split split = Split::train);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Groups samples by patient and deals whole patients to train/val/test.
/// Deterministic in (samples order, fractions, seed).
struct SplitManifests {
  DatasetManifest train;
  DatasetManifest val;
  DatasetManifest test;
};
SplitManifests split_by_patient(const std::vector<Sample>& samples,
                                const std::array<double, 3>& fractions,
                                std::uint64_t seed);

/// ceil(fraction * N) entries drawn without replacement.
DatasetManifest subsample_fraction(const DatasetManifest& manifest, double fraction,
                                   std::uint64_t seed);

enum class LabelModel { independent, ehr_coupled };

/// Procedural grayscale dataset: Gaussian-blob backgrounds plus planted
/// motifs. In ehr_coupled mode label 0 marks the planted texture and
/// label 3 is exactly (texture present AND icu == Positive); the ICU flag is
/// also rendered into the image so label 3 is recoverable from pixels alone.
std::vector<Sample> generate_synthetic_dataset(int n_patients, int images_per_patient,
                                               int image_size, LabelModel label_model,
                                               std::uint64_t seed);

}  // namespace mmsn
