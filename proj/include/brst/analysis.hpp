#pragma once

#include <string>
#include <vector>

#include "brst/corpus.hpp"
#include "brst/model.hpp"

namespace brst {

// Per-site activations over an evaluation set, rows concatenated across
// utterances (frames for encoder sites, token positions for decoder
// sites). The raw block inputs ("enc-0"/"dec-0") ride along separately so
// vertical similarity can pair every site with its input.
struct ActivationDump {
  std::string model_tag;
  Array encoder_input;
  Array decoder_input;
  std::vector<std::pair<std::string, Array>> sites;  // depth order

  const Array* find(const std::string& label) const;
  std::vector<std::string> encoder_site_labels() const;
  std::vector<std::string> decoder_site_labels() const;
};

struct CKAPair {
  std::string site_a;
  std::string site_b;
  double cka = 0.0;
};

struct PushAway {
  std::string section;  // "enc" or "dec"
  int depth = 0;
  double value = 0.0;
};

struct CKAReport {
  std::vector<CKAPair> pairs;
  std::vector<PushAway> push_away;
};

// ||Yc^T Xc||_F^2 / (||Xc^T Xc||_F * ||Yc^T Yc||_F) with column-centered
// inputs. In [0, 1]; invariant to orthogonal maps and isotropic scaling.
double linear_cka(const Array& x, const Array& y);

// Forwards every utterance (teacher-forcing the decoder on the reference
// transcript), concatenates rows per site, then subsamples uniformly to
// max_rows with the seeded rng. max_rows <= 0 keeps everything.
ActivationDump dump_activations(const ModelParams& params, const std::vector<ManifestEntry>& eval_set, int64_t max_rows, uint64_t seed = 0, const std::string& tag = "");

// Same-depth CKA between two models; when b carries adapter sites, also
// compares a's block output against b's after-adapter output and reports
// |cka(block) - cka(after-ADM)| as the push-away number per depth.
CKAReport horizontal_similarity(const ActivationDump& dump_a, const ActivationDump& dump_b);

// CKA between each site's input and output, in depth order.
CKAReport vertical_similarity(const ActivationDump& dump);

// site label -> vertical cka >= threshold
std::vector<std::pair<std::string, bool>> linearity_flags(const CKAReport& vertical, double threshold = 0.95);

void write_cka_csv(const CKAReport& report, const std::string& path);
void write_push_away_csv(const CKAReport& report, const std::string& path);
// Depth on x, cka on y, one polyline per series (series keyed by the
// site_a prefix pattern).
void write_cka_svg(const CKAReport& report, const std::string& path, const std::string& title);

}  // namespace brst
