#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "mmsn/common.hpp"
#include "mmsn/dataset.hpp"
#include "mmsn/png_io.hpp"
#include "test_util.hpp"

using namespace mmsn;

namespace {

std::string label_suffix(std::initializer_list<int> ones) {
  std::string out;
  for (int i = 0; i < kNumLabels; ++i) {
    bool is_one = false;
    for (int j : ones) is_one = is_one || (i == j);
    out += is_one ? ",1" : ",0";
  }
  return out;
}

void write_manifest(const std::filesystem::path& p, const std::vector<std::string>& rows,
                    const std::string& header = "") {
  std::ofstream out(p);
  if (header.empty()) {
    out << "sample_id,patient_id,image_path,age,sex,view,position,icu,mortality";
    for (int i = 0; i < kNumLabels; ++i) out << ",l" << i;
    out << "\n";
  } else {
    out << header << "\n";
  }
  for (const auto& r : rows) out << r << "\n";
}

}  // namespace

TEST_CASE("well-formed manifest loads with all fields") {
  testutil::TempDir tmp("manifest");
  const auto path = tmp.path() / "m.csv";
  write_manifest(path, {
      "s1,p1,images/s1.png,59,Male,PA,Erect,Negative,Negative" + label_suffix({0}),
      "s2,p1,images/s2.png,18,Female,AP,Recumbent,Positive,Negative" + label_suffix({}),
      "s3,p2,images/s3.png,100,Male,LL,Erect,Negative,Positive" + label_suffix({3, 13}),
  });
  const DatasetManifest m = load_manifest(path);
  REQUIRE(m.entries.size() == 3);
  CHECK(m.entries[0].ehr.age == 59);
  CHECK(m.entries[1].ehr.sex == Sex::Female);
  CHECK(m.entries[1].ehr.view == ScanView::AP);
  CHECK(m.entries[2].ehr.in_hospital_mortality == BinaryOutcome::Positive);
  CHECK(m.entries[2].labels.values[3] == 1);
  CHECK(m.entries[2].labels.values[13] == 1);
  CHECK(m.entries[2].labels.count() == 2);
  CHECK(m.resolve_image(m.entries[0]) == tmp.path() / "images/s1.png");
}

TEST_CASE("manifest validation errors carry their codes") {
  testutil::TempDir tmp("manifest_err");
  const auto path = tmp.path() / "m.csv";

  SUBCASE("age 17 is out of range") {
    write_manifest(path, {"s1,p1,x.png,17,Male,PA,Erect,Negative,Negative" + label_suffix({})});
    CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("AgeOutOfRange"), Error);
  }
  SUBCASE("unknown view value") {
    write_manifest(path, {"s1,p1,x.png,40,Male,XX,Erect,Negative,Negative" + label_suffix({})});
    CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("InvalidEnumValue"), Error);
  }
  SUBCASE("duplicate sample id") {
    write_manifest(path, {"s1,p1,x.png,40,Male,PA,Erect,Negative,Negative" + label_suffix({}),
                          "s1,p2,y.png,41,Male,PA,Erect,Negative,Negative" + label_suffix({})});
    CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("DuplicateSampleId"), Error);
  }
  SUBCASE("missing column in header") {
    write_manifest(path, {}, "sample_id,patient_id,image_path,age,sex,view,position,icu");
    CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("MissingColumn"), Error);
  }
  SUBCASE("bad label value") {
    write_manifest(path, {"s1,p1,x.png,40,Male,PA,Erect,Negative,Negative" + label_suffix({}) });
    // rewrite label l0 as 2
    std::string text = testutil::read_file(path);
    const auto pos = text.find(",1");
    (void)pos;
    write_manifest(path, {"s1,p1,x.png,40,Male,PA,Erect,Negative,Negative,2" +
                          label_suffix({}).substr(2)});
    CHECK_THROWS_WITH_AS(load_manifest(path), doctest::Contains("InvalidEnumValue"), Error);
  }
}

TEST_CASE("manifest save/load round trip") {
  const auto samples = generate_synthetic_dataset(5, 3, 96, LabelModel::ehr_coupled, 3);
  const auto splits = split_by_patient(samples, {0.6, 0.2, 0.2}, 9);
  testutil::TempDir tmp("roundtrip");
  save_manifest(splits.train, tmp.path() / "train.csv");
  const DatasetManifest back = load_manifest(tmp.path() / "train.csv");
  CHECK(back.same_entries(splits.train));
}

TEST_CASE("split_by_patient is deterministic and groups whole patients") {
  const auto samples = generate_synthetic_dataset(10, 5, 96, LabelModel::independent, 21);
  const auto a = split_by_patient(samples, {0.8, 0.1, 0.1}, 7);
  const auto b = split_by_patient(samples, {0.8, 0.1, 0.1}, 7);
  CHECK(a.train.same_entries(b.train));
  CHECK(a.val.same_entries(b.val));
  CHECK(a.test.same_entries(b.test));

  auto patients_of = [](const DatasetManifest& m) {
    std::set<std::string> out;
    for (const auto& e : m.entries) out.insert(e.patient_id);
    return out;
  };
  const auto pt = patients_of(a.train), pv = patients_of(a.val), ps = patients_of(a.test);
  for (const auto& p : pt) {
    CHECK(pv.count(p) == 0);
    CHECK(ps.count(p) == 0);
  }
  for (const auto& p : pv) CHECK(ps.count(p) == 0);
  CHECK(pt.size() + pv.size() + ps.size() == 10);

  // Every patient contributes all 5 samples to exactly one split.
  for (const auto& m : {a.train, a.val, a.test}) {
    std::map<std::string, int> counts;
    for (const auto& e : m.entries) ++counts[e.patient_id];
    for (const auto& [pid, n] : counts) CHECK(n == 5);
  }
}

TEST_CASE("split_by_patient rejects fewer than 3 patients") {
  const auto samples = generate_synthetic_dataset(2, 3, 96, LabelModel::independent, 1);
  CHECK_THROWS_WITH_AS(split_by_patient(samples, {0.8, 0.1, 0.1}, 0),
                       doctest::Contains("TooFewPatients"), Error);
}

TEST_CASE("synthetic generator counts and determinism") {
  const auto a = generate_synthetic_dataset(4, 2, 128, LabelModel::independent, 1);
  REQUIRE(a.size() == 8);
  std::set<std::string> patients;
  for (const auto& s : a) patients.insert(s.patient_id);
  CHECK(patients.size() == 4);

  const auto b = generate_synthetic_dataset(4, 2, 128, LabelModel::independent, 1);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].sample_id == b[i].sample_id);
    CHECK(a[i].ehr == b[i].ehr);
    CHECK(a[i].labels == b[i].labels);
    CHECK((a[i].image.px - b[i].image.px).cwiseAbs().maxCoeff() == 0.0);
  }

  const auto c = generate_synthetic_dataset(4, 2, 128, LabelModel::independent, 2);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    any_diff = any_diff || (a[i].image.px - c[i].image.px).cwiseAbs().maxCoeff() > 0.0;
  }
  CHECK(any_diff);
}

TEST_CASE("ehr_coupled mode plants label 3 = texture AND icu on every sample") {
  const auto samples = generate_synthetic_dataset(30, 3, 96, LabelModel::ehr_coupled, 5);
  int positives = 0;
  for (const auto& s : samples) {
    const bool texture = s.labels.values[0] == 1;  // l0 marks the texture itself
    const bool icu = s.ehr.icu_admission == BinaryOutcome::Positive;
    CHECK(s.labels.values[3] == ((texture && icu) ? 1 : 0));
    positives += s.labels.values[3];
  }
  CHECK(positives > 0);
  CHECK(positives < static_cast<int>(samples.size()));
}

TEST_CASE("planted texture is visible in the pixels") {
  // Horizontal high-frequency energy separates textured samples; this checks
  // the image, not the bookkeeping.
  const auto samples = generate_synthetic_dataset(40, 1, 96, LabelModel::ehr_coupled, 8);
  auto stripe_energy = [](const Image& img) {
    double e = 0.0;
    for (int y = img.h / 3; y < 2 * img.h / 3; ++y) {
      for (int x = img.w / 3; x < 2 * img.w / 3 - 1; ++x) {
        const double d = img.px(y, x + 1) - img.px(y, x);
        e += d * d;
      }
    }
    return e;
  };
  double min_textured = 1e300, max_plain = 0.0;
  int textured = 0;
  for (const auto& s : samples) {
    const double e = stripe_energy(s.image);
    if (s.labels.values[0] == 1) {
      min_textured = std::min(min_textured, e);
      ++textured;
    } else {
      max_plain = std::max(max_plain, e);
    }
  }
  REQUIRE(textured > 0);
  REQUIRE(textured < static_cast<int>(samples.size()));
  CHECK(min_textured > max_plain);
}

TEST_CASE("ehr frequencies follow the documented rank order") {
  const auto samples = generate_synthetic_dataset(400, 1, 96, LabelModel::independent, 77);
  std::map<ScanView, int> views;
  int erect = 0, neg_icu = 0, neg_mort = 0;
  for (const auto& s : samples) {
    ++views[s.ehr.view];
    erect += s.ehr.position == PatientPosition::Erect;
    neg_icu += s.ehr.icu_admission == BinaryOutcome::Negative;
    neg_mort += s.ehr.in_hospital_mortality == BinaryOutcome::Negative;
    CHECK(s.ehr.age >= kAgeMin);
    CHECK(s.ehr.age <= kAgeMax);
  }
  const int n = static_cast<int>(samples.size());
  CHECK(views[ScanView::AP] > views[ScanView::PA]);
  CHECK(views[ScanView::PA] > views[ScanView::L]);
  CHECK(views[ScanView::L] > views[ScanView::LL]);
  CHECK(erect > n / 2);
  CHECK(neg_icu > n / 2);
  CHECK(neg_mort > n / 2);
}

TEST_CASE("synthetic generator rejects undersized images") {
  CHECK_THROWS_WITH_AS(generate_synthetic_dataset(2, 2, 64, LabelModel::independent, 0),
                       doctest::Contains("InvalidSize"), Error);
}

TEST_CASE("subsample_fraction counting, identity, and seed variety") {
  DatasetManifest m;
  for (int i = 0; i < 1000; ++i) {
    ManifestEntry e;
    e.sample_id = "s" + std::to_string(i);
    e.patient_id = "p" + std::to_string(i);
    m.entries.push_back(e);
  }
  CHECK(subsample_fraction(m, 0.01, 3).entries.size() == 10);
  CHECK(subsample_fraction(m, 1.0, 3).entries.size() == 1000);

  std::set<std::string> signatures;
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto sub = subsample_fraction(m, 0.05, s);
    std::string sig;
    for (const auto& e : sub.entries) sig += e.sample_id + ";";
    signatures.insert(sig);
  }
  CHECK(signatures.size() == 5);

  DatasetManifest empty;
  CHECK_THROWS_WITH_AS(subsample_fraction(empty, 0.5, 0), doctest::Contains("EmptyResult"), Error);
}

TEST_CASE("png round trip preserves 8-bit quantized intensities") {
  testutil::TempDir tmp("png");
  const auto samples = generate_synthetic_dataset(1, 1, 96, LabelModel::ehr_coupled, 9);
  const Image& img = samples[0].image;
  write_png_gray8(tmp.path() / "a.png", img);
  const Image back = read_png_gray8(tmp.path() / "a.png");
  REQUIRE(back.h == img.h);
  REQUIRE(back.w == img.w);
  double max_err = 0.0;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) max_err = std::max(max_err, std::abs(back.px(y, x) - img.px(y, x)));
  }
  CHECK(max_err <= 0.5 / 255.0 + 1e-12);

  write_png_gray8(tmp.path() / "b.png", img);
  CHECK(testutil::files_identical(tmp.path() / "a.png", tmp.path() / "b.png"));
}
