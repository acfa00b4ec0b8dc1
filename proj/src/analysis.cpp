#include "brst/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "brst/errors.hpp"
#include "brst/features.hpp"
#include "brst/parallel.hpp"

namespace brst {

double linear_cka(const Array& x, const Array& y) {
  if (x.ndim() != 2 || y.ndim() != 2) throw InputError("linear_cka: expected 2-D activation matrices");
  const int64_t n = x.rows();
  if (y.rows() != n) throw InputError("linear_cka: row counts differ: " + std::to_string(n) + " vs " + std::to_string(y.rows()));
  if (n < 2) throw InputError("linear_cka: need at least two rows");

  auto center = [](const Array& a) {
    Array c = a;
    const int64_t rows = a.rows(), cols = a.cols();
    for (int64_t j = 0; j < cols; ++j) {
      double mean = 0.0;
      for (int64_t i = 0; i < rows; ++i) mean += a.at(i, j);
      mean /= static_cast<double>(rows);
      for (int64_t i = 0; i < rows; ++i) c.at(i, j) -= mean;
    }
    return c;
  };
  Array xc = center(x);
  Array yc = center(y);

  auto cross_fro2 = [](const Array& a, const Array& b) {
    // ||A^T B||_F^2 without materializing the product transpose
    const Array at = transpose_value(a);
    const Array prod = matmul_value(at, b);
    double s = 0.0;
    for (int64_t i = 0; i < prod.numel(); ++i) s += prod[i] * prod[i];
    return s;
  };

  const double xy = cross_fro2(yc, xc);
  const double xx = cross_fro2(xc, xc);
  const double yy = cross_fro2(yc, yc);
  if (xx <= 0.0 || yy <= 0.0) {
    throw DegenerateInputError("linear_cka: zero-variance input (all rows identical)");
  }
  return xy / (std::sqrt(xx) * std::sqrt(yy));
}

const Array* ActivationDump::find(const std::string& label) const {
  for (const auto& [name, arr] : sites) {
    if (name == label) return &arr;
  }
  return nullptr;
}

std::vector<std::string> ActivationDump::encoder_site_labels() const {
  std::vector<std::string> out;
  for (const auto& [name, arr] : sites) {
    if (name.rfind("enc-", 0) == 0) out.push_back(name);
  }
  return out;
}

std::vector<std::string> ActivationDump::decoder_site_labels() const {
  std::vector<std::string> out;
  for (const auto& [name, arr] : sites) {
    if (name.rfind("dec-", 0) == 0) out.push_back(name);
  }
  return out;
}

namespace {

Array concat_rows(const std::vector<const Array*>& parts) {
  int64_t rows = 0;
  const int64_t cols = parts.front()->cols();
  for (const Array* p : parts) rows += p->rows();
  Array out({rows, cols});
  int64_t at = 0;
  for (const Array* p : parts) {
    for (int64_t i = 0; i < p->numel(); ++i) out[at * cols + i] = (*p)[i];
    at += p->rows();
  }
  return out;
}

Array take_rows(const Array& a, const std::vector<int64_t>& rows) {
  Array out({static_cast<int64_t>(rows.size()), a.cols()});
  for (size_t r = 0; r < rows.size(); ++r) {
    for (int64_t j = 0; j < a.cols(); ++j) out.at(static_cast<int64_t>(r), j) = a.at(rows[r], j);
  }
  return out;
}

// sorted uniform sample without replacement
std::vector<int64_t> sample_rows(int64_t total, int64_t want, uint64_t seed) {
  std::vector<int64_t> all(static_cast<size_t>(total));
  for (int64_t i = 0; i < total; ++i) all[static_cast<size_t>(i)] = i;
  if (want <= 0 || want >= total) return all;
  Rng rng(seed);
  rng.shuffle(all);
  all.resize(static_cast<size_t>(want));
  std::sort(all.begin(), all.end());
  return all;
}

int parse_depth(const std::string& label) {
  const size_t dash = label.find('-');
  return std::stoi(label.substr(dash + 1));
}

bool is_adapter_site(const std::string& label) {
  return label.size() > 10 && label.compare(label.size() - 10, 10, "-after-ADM") == 0;
}

}  // namespace

ActivationDump dump_activations(const ModelParams& params, const std::vector<ManifestEntry>& eval_set, int64_t max_rows, uint64_t seed, const std::string& tag) {
  if (eval_set.empty()) throw InputError("dump_activations: empty evaluation set");

  struct PerUtt {
    std::vector<std::pair<std::string, Array>> enc;
    std::vector<std::pair<std::string, Array>> dec;
  };
  std::vector<PerUtt> per_utt = parallel_map<PerUtt>(eval_set.size(), [&](size_t u) {
    const ManifestEntry& entry = eval_set[u];
    PerUtt out;
    Array feats = apply_cmvn(load_features(entry));
    EncodeResult enc = encode(params, feats, true);
    out.enc = std::move(enc.captures);
    TokenSequence prefix = {params.vocab.sos_id};
    for (const auto& tok : entry.transcript) prefix.push_back(params.vocab.require(tok));
    DecodeForwardResult dec = decoder_forward_all(params, enc.output, prefix, true);
    out.dec = std::move(dec.captures);
    return out;
  });

  ActivationDump dump;
  dump.model_tag = tag;
  auto gather = [&](bool decoder, const std::string& label) {
    std::vector<const Array*> parts;
    for (const PerUtt& pu : per_utt) {
      const auto& list = decoder ? pu.dec : pu.enc;
      for (const auto& [name, arr] : list) {
        if (name == label) parts.push_back(&arr);
      }
    }
    if (parts.size() != per_utt.size()) throw Error("dump_activations: site " + label + " missing for some utterances");
    return concat_rows(parts);
  };

  // site label inventory from the first utterance, preserved in order
  std::vector<std::string> enc_labels, dec_labels;
  for (const auto& [name, arr] : per_utt.front().enc) enc_labels.push_back(name);
  for (const auto& [name, arr] : per_utt.front().dec) dec_labels.push_back(name);

  Array enc_input = gather(false, "enc-0");
  Array dec_input = gather(true, "dec-0");
  const std::vector<int64_t> enc_rows = sample_rows(enc_input.rows(), max_rows, mix_seed(seed, 0xE));
  const std::vector<int64_t> dec_rows = sample_rows(dec_input.rows(), max_rows, mix_seed(seed, 0xD));
  dump.encoder_input = take_rows(enc_input, enc_rows);
  dump.decoder_input = take_rows(dec_input, dec_rows);
  for (const auto& label : enc_labels) {
    if (label == "enc-0") continue;
    dump.sites.emplace_back(label, take_rows(gather(false, label), enc_rows));
  }
  for (const auto& label : dec_labels) {
    if (label == "dec-0") continue;
    dump.sites.emplace_back(label, take_rows(gather(true, label), dec_rows));
  }
  return dump;
}

CKAReport horizontal_similarity(const ActivationDump& dump_a, const ActivationDump& dump_b) {
  CKAReport report;
  for (const char* section : {"enc", "dec"}) {
    auto block_labels = [&](const ActivationDump& d) {
      std::vector<std::string> out;
      for (const auto& [name, arr] : d.sites) {
        if (name.rfind(std::string(section) + "-", 0) == 0 && !is_adapter_site(name)) out.push_back(name);
      }
      return out;
    };
    const auto a_labels = block_labels(dump_a);
    const auto b_labels = block_labels(dump_b);
    if (a_labels.size() != b_labels.size()) {
      throw InputError(std::string("horizontal_similarity: ") + section + " depth mismatch: " + std::to_string(a_labels.size()) + " vs " + std::to_string(b_labels.size()));
    }
    for (size_t i = 0; i < a_labels.size(); ++i) {
      const Array* a = dump_a.find(a_labels[i]);
      const Array* b = dump_b.find(b_labels[i]);
      CKAPair pair;
      pair.site_a = dump_a.model_tag.empty() ? a_labels[i] : dump_a.model_tag + ":" + a_labels[i];
      pair.site_b = dump_b.model_tag.empty() ? b_labels[i] : dump_b.model_tag + ":" + b_labels[i];
      pair.cka = linear_cka(*a, *b);
      report.pairs.push_back(pair);

      const std::string adm_label = b_labels[i] + "-after-ADM";
      if (const Array* adm = dump_b.find(adm_label)) {
        CKAPair adm_pair;
        adm_pair.site_a = pair.site_a;
        adm_pair.site_b = dump_b.model_tag.empty() ? adm_label : dump_b.model_tag + ":" + adm_label;
        adm_pair.cka = linear_cka(*a, *adm);
        report.pairs.push_back(adm_pair);

        PushAway pa;
        pa.section = section;
        pa.depth = parse_depth(b_labels[i]);
        pa.value = std::abs(pair.cka - adm_pair.cka);
        report.push_away.push_back(pa);
      }
    }
  }
  return report;
}

CKAReport vertical_similarity(const ActivationDump& dump) {
  CKAReport report;
  const Array* enc_input = &dump.encoder_input;
  const Array* dec_input = &dump.decoder_input;
  for (const auto& [name, arr] : dump.sites) {
    const bool decoder = name.rfind("dec-", 0) == 0;
    const Array*& input = decoder ? dec_input : enc_input;
    if (input->numel() == 0) throw InputError("vertical_similarity: dump lacks the block input for " + name);
    CKAPair pair;
    pair.site_a = name + ":in";
    pair.site_b = name;
    pair.cka = linear_cka(*input, arr);
    report.pairs.push_back(pair);
    input = &arr;
  }
  return report;
}

std::vector<std::pair<std::string, bool>> linearity_flags(const CKAReport& vertical, double threshold) {
  if (threshold <= 0.0 || threshold > 1.0) throw InputError("linearity_flags: threshold must be in (0, 1]");
  std::vector<std::pair<std::string, bool>> flags;
  for (const auto& pair : vertical.pairs) {
    flags.emplace_back(pair.site_b, pair.cka >= threshold);
  }
  return flags;
}

void write_cka_csv(const CKAReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << "site_a,site_b,cka\n";
  char buf[64];
  for (const auto& pair : report.pairs) {
    std::snprintf(buf, sizeof(buf), "%.12f", pair.cka);
    out << pair.site_a << ',' << pair.site_b << ',' << buf << '\n';
  }
}

void write_push_away_csv(const CKAReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write report: " + path);
  out << "section,depth,push_away\n";
  char buf[64];
  for (const auto& pa : report.push_away) {
    std::snprintf(buf, sizeof(buf), "%.12f", pa.value);
    out << pa.section << ',' << pa.depth << ',' << buf << '\n';
  }
}

void write_cka_svg(const CKAReport& report, const std::string& path, const std::string& title) {
  // group pairs into series by everything but the depth digits
  std::map<std::string, std::vector<std::pair<int, double>>> series;
  for (const auto& pair : report.pairs) {
    std::string key;
    int depth = 0;
    const size_t dash = pair.site_b.find_last_of('-');
    (void)dash;
    // depth comes from the site_b label ("...enc-3" or "...enc-3-after-ADM")
    std::string label = pair.site_b;
    const size_t colon = label.find(':');
    if (colon != std::string::npos) label = label.substr(colon + 1);
    const bool adm = is_adapter_site(label);
    std::string body = adm ? label.substr(0, label.size() - 10) : label;
    depth = parse_depth(body);
    key = body.substr(0, body.find('-')) + (adm ? " after-ADM" : "");
    if (pair.site_a.find(":in") != std::string::npos) key = "vertical " + key;
    series[key].emplace_back(depth, pair.cka);
  }

  const int width = 640, height = 400, margin = 50;
  std::ofstream out(path);
  if (!out) throw IoError("cannot write chart: " + path);
  out << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height << "'>\n";
  out << "<text x='" << width / 2 << "' y='20' text-anchor='middle' font-size='14'>" << title << "</text>\n";
  out << "<line x1='" << margin << "' y1='" << height - margin << "' x2='" << width - margin << "' y2='" << height - margin << "' stroke='black'/>\n";
  out << "<line x1='" << margin << "' y1='" << margin << "' x2='" << margin << "' y2='" << height - margin << "' stroke='black'/>\n";
  out << "<text x='" << width / 2 << "' y='" << height - 10 << "' text-anchor='middle' font-size='11'>depth</text>\n";
  out << "<text x='15' y='" << height / 2 << "' font-size='11' transform='rotate(-90 15 " << height / 2 << ")'>cka</text>\n";

  int max_depth = 1;
  for (const auto& [key, points] : series) {
    for (const auto& [d, v] : points) max_depth = std::max(max_depth, d);
  }
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};
  int color_idx = 0;
  int legend_y = margin;
  for (const auto& [key, points_in] : series) {
    auto points = points_in;
    std::sort(points.begin(), points.end());
    const char* color = colors[color_idx % 6];
    out << "<polyline fill='none' stroke='" << color << "' stroke-width='1.5' points='";
    for (const auto& [d, v] : points) {
      const double px = margin + (static_cast<double>(d) / max_depth) * (width - 2 * margin);
      const double py = height - margin - std::clamp(v, 0.0, 1.0) * (height - 2 * margin);
      out << px << ',' << py << ' ';
    }
    out << "'/>\n";
    out << "<text x='" << width - margin - 150 << "' y='" << legend_y << "' font-size='10' fill='" << color << "'>" << key << "</text>\n";
    legend_y += 14;
    ++color_idx;
  }
  out << "</svg>\n";
}

}  // namespace brst
