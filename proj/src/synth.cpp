#include <algorithm>
#include <cmath>
#include <sstream>

#include "mmsn/common.hpp"
#include "mmsn/dataset.hpp"
#include "mmsn/rng.hpp"

namespace mmsn {

namespace {

// Frequencies follow the qualitative rank order of the source cohort:
// AP is the most common view, erect the most common position, and negative
// outcomes dominate both inpatient flags.
Sex draw_sex(Prng& rng) { return rng.bernoulli(0.55) ? Sex::Male : Sex::Female; }

ScanView draw_view(Prng& rng) {
  const double u = rng.uniform();
  if (u < 0.55) return ScanView::AP;
  if (u < 0.80) return ScanView::PA;
  if (u < 0.95) return ScanView::L;
  return ScanView::LL;
}

PatientPosition draw_position(Prng& rng) {
  return rng.bernoulli(0.70) ? PatientPosition::Erect : PatientPosition::Recumbent;
}

int draw_age(Prng& rng) {
  const int age = static_cast<int>(std::lround(rng.normal(63.0, 15.0)));
  return std::clamp(age, kAgeMin, kAgeMax);
}

void add_gaussian_blob(Image& img, double cy, double cx, double sigma, double amp) {
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const double dy = y - cy, dx = x - cx;
      img.px(y, x) += amp * std::exp(-(dy * dy + dx * dx) * inv);
    }
  }
}

// High-contrast vertical stripe patch; the texture that drives labels in
// ehr_coupled mode.
void add_stripe_texture(Image& img, int y0, int x0, int side, int period) {
  for (int y = y0; y < y0 + side && y < img.h; ++y) {
    for (int x = x0; x < x0 + side && x < img.w; ++x) {
      const double phase = ((x - x0) % period) < period / 2 ? 1.0 : -1.0;
      img.px(y, x) += 0.35 * phase;
    }
  }
}

// Bright horizontal bar plus a thin vertical line, loosely imitating lines
// and devices seen on intensive-care scans.
void add_icu_motif(Image& img, Prng& rng) {
  const int bar_y = static_cast<int>(std::lround(img.h * rng.uniform(0.08, 0.18)));
  const int bar_h = std::max(3, img.h / 24);
  for (int y = bar_y; y < std::min(img.h, bar_y + bar_h); ++y) {
    for (int x = 0; x < img.w; ++x) img.px(y, x) += 0.5;
  }
  const int line_x = static_cast<int>(std::lround(img.w * rng.uniform(0.25, 0.75)));
  const int line_w = std::max(2, img.w / 48);
  for (int y = bar_y; y < img.h; ++y) {
    for (int x = line_x; x < std::min(img.w, line_x + line_w); ++x) img.px(y, x) += 0.45;
  }
}

Image render_image(int size, bool texture, bool icu_visible, Prng& rng) {
  Image img(size, size);
  img.px.setConstant(0.25);

  const int n_blobs = rng.uniform_int(3, 6);
  for (int b = 0; b < n_blobs; ++b) {
    add_gaussian_blob(img, rng.uniform(0.15, 0.85) * size, rng.uniform(0.15, 0.85) * size,
                      rng.uniform(0.10, 0.30) * size, rng.uniform(0.05, 0.25));
  }

  if (texture) {
    const int side = static_cast<int>(std::lround(0.45 * size));
    const int jitter = std::max(1, size / 12);
    const int y0 = (size - side) / 2 + rng.uniform_int(-jitter, jitter);
    const int x0 = (size - side) / 2 + rng.uniform_int(-jitter, jitter);
    add_stripe_texture(img, std::max(0, y0), std::max(0, x0), side, std::max(4, size / 24));
  }
  if (icu_visible) add_icu_motif(img, rng);

  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      img.px(y, x) = std::clamp(img.px(y, x) + rng.uniform(-0.02, 0.02), 0.0, 1.0);
    }
  }
  return img;
}

std::string format_id(const char* prefix, int value) {
  std::ostringstream ss;
  ss << prefix;
  for (int digits = 10000; digits >= 10; digits /= 10) {
    if (value < digits) ss << '0';
  }
  ss << value;
  return ss.str();
}

}  // namespace

std::vector<Sample> generate_synthetic_dataset(int n_patients, int images_per_patient,
                                               int image_size, LabelModel label_model,
                                               std::uint64_t seed) {
  require(n_patients >= 1, "InvalidArgument", "n_patients must be >= 1");
  require(images_per_patient >= 1, "InvalidArgument", "images_per_patient must be >= 1");
  require(image_size >= 96, "InvalidSize",
          "image_size must be >= 96, got " + std::to_string(image_size));

  // Per-label base prevalences, decreasing with label index.
  std::array<double, kNumLabels> prevalence{};
  for (int i = 0; i < kNumLabels; ++i) prevalence[static_cast<std::size_t>(i)] = 0.18 * std::pow(0.87, i);

  std::vector<Sample> samples;
  samples.reserve(static_cast<std::size_t>(n_patients) * images_per_patient);

  for (int p = 0; p < n_patients; ++p) {
    Prng prng(derive_seed(seed, "synth_patient", static_cast<std::uint64_t>(p)));
    const std::string patient_id = format_id("P", p);

    EhrRecord base;
    base.age = draw_age(prng);
    base.sex = draw_sex(prng);
    base.icu_admission = prng.bernoulli(0.45) ? BinaryOutcome::Positive : BinaryOutcome::Negative;
    base.in_hospital_mortality =
        prng.bernoulli(0.15) ? BinaryOutcome::Positive : BinaryOutcome::Negative;

    for (int k = 0; k < images_per_patient; ++k) {
      Prng irng(derive_seed(seed, "synth_image", static_cast<std::uint64_t>(p),
                            static_cast<std::uint64_t>(k)));
      Sample s;
      s.patient_id = patient_id;
      s.sample_id = patient_id + "-" + format_id("I", k);
      s.ehr = base;
      s.ehr.view = draw_view(irng);
      s.ehr.position = draw_position(irng);

      const bool texture = irng.bernoulli(0.5);
      const bool icu = s.ehr.icu_admission == BinaryOutcome::Positive;

      for (int i = 0; i < kNumLabels; ++i) {
        s.labels.values[static_cast<std::size_t>(i)] =
            irng.bernoulli(prevalence[static_cast<std::size_t>(i)]) ? 1 : 0;
      }
      if (label_model == LabelModel::ehr_coupled) {
        // Planted rule: l0 marks the texture itself; l3 is the conjunction
        // of the texture with the ICU flag.
        s.labels.values[0] = texture ? 1 : 0;
        s.labels.values[3] = (texture && icu) ? 1 : 0;
      }

      // The ICU flag is rendered only in coupled mode, where downstream
      // checks need the conjunction to be visible in pixels.
      const bool icu_visible = label_model == LabelModel::ehr_coupled && icu;
      const bool texture_visible = label_model == LabelModel::ehr_coupled
                                       ? texture
                                       : irng.bernoulli(0.5);
      s.image = render_image(image_size, texture_visible, icu_visible, irng);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

}  // namespace mmsn
