#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "eegcvae/asr.hpp"
#include "eegcvae/cvae.hpp"
#include "eegcvae/dsp.hpp"
#include "eegcvae/errors.hpp"
#include "eegcvae/synth.hpp"

// RunConfig: one JSON document driving the whole pipeline.
//
// {
//   "seed": 42,
//   "output_dir": "",                 // empty: $EEGCVAE_OUT/run-<seed>, else runs/run-<seed>
//   "split_fraction": 0.8,
//   "synth":    { n_examples, n_classes, channels, fs_hz, duration_s, snr_db,
//                 line_noise_amp, class_amp, confound_amp },
//   "filter":   { band_low_hz, band_high_hz, band_order, notch_hz, notch_q },
//   "kpca":     { out_dim, degree, scale, offset, max_fit_frames },
//   "cvae":     { epochs, w_mse, w_kl, w_ce, kl_count_replicas, dropout, lr, rho, eps },
//   "isolated": { epochs, batch, dropout, lr, tcn_filters, gru_hidden },
//   "ctc":      { enabled, epochs, batch, lr, hidden, beam_width, lm_weight }
// }
//
// Every key is optional; unknown keys are rejected. snr_db accepts the
// string "inf" for a noise-free dataset.

namespace eegcvae::config {

using json = nlohmann::json;

inline constexpr const char* kOutputRootEnv = "EEGCVAE_OUT";

struct KpcaSettings {
  Eigen::Index out_dim = 30;
  int degree = 3;
  double scale = 0.0;
  double offset = 1.0;
  Eigen::Index max_fit_frames = 1000;
};

struct CtcSettings {
  bool enabled = true;
  asr::CtcTrainConfig train;
  asr::BeamOptions beam;
};

struct RunConfig {
  std::uint64_t seed = 42;
  std::string output_dir;
  double split_fraction = 0.8;
  synth::SynthConfig synth;
  dsp::FilterSettings filter;
  KpcaSettings kpca;
  cvae::TrainConfig cvae;
  asr::IsolatedTrainConfig isolated;
  CtcSettings ctc;

  synth::SynthConfig synth_config() const {
    synth::SynthConfig s = synth;
    s.seed = seed;
    return s;
  }

  void validate() const {
    synth_config().validate();
    if (!(split_fraction > 0.0 && split_fraction < 1.0)) throw ConfigError("split_fraction must lie in (0, 1)");
    if (kpca.out_dim < 1) throw ConfigError("kpca.out_dim must be >= 1");
    if (kpca.degree < 1) throw ConfigError("kpca.degree must be >= 1");
    if (kpca.max_fit_frames < 2) throw ConfigError("kpca.max_fit_frames must be >= 2");
    if (kpca.max_fit_frames > 2000) throw ConfigError("kpca.max_fit_frames must be <= 2000");
    if (cvae.epochs < 1) throw ConfigError("cvae.epochs must be >= 1");
    if (!(cvae.dropout >= 0.0 && cvae.dropout < 1.0)) throw ConfigError("cvae.dropout must lie in [0, 1)");
    if (!(cvae.lr > 0.0)) throw ConfigError("cvae.lr must be positive");
    if (cvae.weights.mse < 0 || cvae.weights.kl < 0 || cvae.weights.ce < 0) {
      throw ConfigError("cvae loss weights must be >= 0");
    }
    if (isolated.epochs < 1) throw ConfigError("isolated.epochs must be >= 1");
    if (isolated.batch < 1) throw ConfigError("isolated.batch must be >= 1");
    if (!(isolated.dropout >= 0.0 && isolated.dropout < 1.0)) throw ConfigError("isolated.dropout must lie in [0, 1)");
    if (!(isolated.lr > 0.0)) throw ConfigError("isolated.lr must be positive");
    if (isolated.tcn_filters < 1 || isolated.gru_hidden < 1) throw ConfigError("isolated layer widths must be >= 1");
    if (ctc.train.epochs < 1) throw ConfigError("ctc.epochs must be >= 1");
    if (ctc.train.batch < 1) throw ConfigError("ctc.batch must be >= 1");
    if (!(ctc.train.lr > 0.0)) throw ConfigError("ctc.lr must be positive");
    if (ctc.train.hidden < 1) throw ConfigError("ctc.hidden must be >= 1");
    if (ctc.beam.beam_width < 1) throw ConfigError("ctc.beam_width must be >= 1");
    if (!(ctc.beam.lm_weight >= 0.0)) throw ConfigError("ctc.lm_weight must be >= 0");
  }
};

namespace detail {

inline void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where.empty() ? "config must be an object" : where + " must be an object");
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key: " + (where.empty() ? key : where + "." + key));
  }
}

template <typename T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key " + (where.empty() ? "" : where + ".") + key + " has the wrong type");
  }
}

inline void read_real(const json& obj, const char* key, double& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const json& v = obj.at(key);
  if (v.is_string() && (v == "inf" || v == "+inf")) {
    out = std::numeric_limits<double>::infinity();
  } else {
    read(obj, key, out, where);
  }
}

inline json real(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  return v;
}

}  // namespace detail

inline RunConfig from_json(const json& doc) {
  using detail::read;
  using detail::read_real;
  detail::reject_unknown(doc, {"seed", "output_dir", "split_fraction", "synth", "filter", "kpca", "cvae", "isolated", "ctc"},
                         "");
  RunConfig c;
  read(doc, "seed", c.seed, "");
  read(doc, "output_dir", c.output_dir, "");
  read(doc, "split_fraction", c.split_fraction, "");
  if (doc.contains("synth")) {
    const json& s = doc["synth"];
    detail::reject_unknown(s, {"n_examples", "n_classes", "channels", "fs_hz", "duration_s", "snr_db", "line_noise_amp",
                               "class_amp", "confound_amp"},
                           "synth");
    read(s, "n_examples", c.synth.n_examples, "synth");
    read(s, "n_classes", c.synth.n_classes, "synth");
    read(s, "channels", c.synth.channels, "synth");
    read(s, "fs_hz", c.synth.fs_hz, "synth");
    read(s, "duration_s", c.synth.duration_s, "synth");
    read_real(s, "snr_db", c.synth.snr_db, "synth");
    read(s, "line_noise_amp", c.synth.line_noise_amp, "synth");
    read(s, "class_amp", c.synth.class_amp, "synth");
    read(s, "confound_amp", c.synth.confound_amp, "synth");
  }
  if (doc.contains("filter")) {
    const json& f = doc["filter"];
    detail::reject_unknown(f, {"band_low_hz", "band_high_hz", "band_order", "notch_hz", "notch_q"}, "filter");
    read(f, "band_low_hz", c.filter.band_low_hz, "filter");
    read(f, "band_high_hz", c.filter.band_high_hz, "filter");
    read(f, "band_order", c.filter.band_order, "filter");
    read(f, "notch_hz", c.filter.notch_hz, "filter");
    read(f, "notch_q", c.filter.notch_q, "filter");
  }
  if (doc.contains("kpca")) {
    const json& k = doc["kpca"];
    detail::reject_unknown(k, {"out_dim", "degree", "scale", "offset", "max_fit_frames"}, "kpca");
    read(k, "out_dim", c.kpca.out_dim, "kpca");
    read(k, "degree", c.kpca.degree, "kpca");
    read(k, "scale", c.kpca.scale, "kpca");
    read(k, "offset", c.kpca.offset, "kpca");
    read(k, "max_fit_frames", c.kpca.max_fit_frames, "kpca");
  }
  if (doc.contains("cvae")) {
    const json& v = doc["cvae"];
    detail::reject_unknown(v, {"epochs", "w_mse", "w_kl", "w_ce", "kl_count_replicas", "dropout", "lr", "rho", "eps"},
                           "cvae");
    read(v, "epochs", c.cvae.epochs, "cvae");
    read(v, "w_mse", c.cvae.weights.mse, "cvae");
    read(v, "w_kl", c.cvae.weights.kl, "cvae");
    read(v, "w_ce", c.cvae.weights.ce, "cvae");
    read(v, "kl_count_replicas", c.cvae.kl_count_replicas, "cvae");
    read(v, "dropout", c.cvae.dropout, "cvae");
    read(v, "lr", c.cvae.lr, "cvae");
    read(v, "rho", c.cvae.rho, "cvae");
    read(v, "eps", c.cvae.eps, "cvae");
  }
  if (doc.contains("isolated")) {
    const json& i = doc["isolated"];
    detail::reject_unknown(i, {"epochs", "batch", "dropout", "lr", "tcn_filters", "gru_hidden"}, "isolated");
    read(i, "epochs", c.isolated.epochs, "isolated");
    read(i, "batch", c.isolated.batch, "isolated");
    read(i, "dropout", c.isolated.dropout, "isolated");
    read(i, "lr", c.isolated.lr, "isolated");
    read(i, "tcn_filters", c.isolated.tcn_filters, "isolated");
    read(i, "gru_hidden", c.isolated.gru_hidden, "isolated");
  }
  if (doc.contains("ctc")) {
    const json& t = doc["ctc"];
    detail::reject_unknown(t, {"enabled", "epochs", "batch", "lr", "hidden", "beam_width", "lm_weight"}, "ctc");
    read(t, "enabled", c.ctc.enabled, "ctc");
    read(t, "epochs", c.ctc.train.epochs, "ctc");
    read(t, "batch", c.ctc.train.batch, "ctc");
    read(t, "lr", c.ctc.train.lr, "ctc");
    read(t, "hidden", c.ctc.train.hidden, "ctc");
    read(t, "beam_width", c.ctc.beam.beam_width, "ctc");
    read(t, "lm_weight", c.ctc.beam.lm_weight, "ctc");
  }
  c.validate();
  return c;
}

inline json to_json(const RunConfig& c) {
  json doc;
  doc["seed"] = c.seed;
  doc["output_dir"] = c.output_dir;
  doc["split_fraction"] = c.split_fraction;
  doc["synth"] = {{"n_examples", c.synth.n_examples},
                  {"n_classes", c.synth.n_classes},
                  {"channels", c.synth.channels},
                  {"fs_hz", c.synth.fs_hz},
                  {"duration_s", c.synth.duration_s},
                  {"snr_db", detail::real(c.synth.snr_db)},
                  {"line_noise_amp", c.synth.line_noise_amp},
                  {"class_amp", c.synth.class_amp},
                  {"confound_amp", c.synth.confound_amp}};
  doc["filter"] = {{"band_low_hz", c.filter.band_low_hz},
                   {"band_high_hz", c.filter.band_high_hz},
                   {"band_order", c.filter.band_order},
                   {"notch_hz", c.filter.notch_hz},
                   {"notch_q", c.filter.notch_q}};
  doc["kpca"] = {{"out_dim", c.kpca.out_dim},
                 {"degree", c.kpca.degree},
                 {"scale", c.kpca.scale},
                 {"offset", c.kpca.offset},
                 {"max_fit_frames", c.kpca.max_fit_frames}};
  doc["cvae"] = {{"epochs", c.cvae.epochs},
                 {"w_mse", c.cvae.weights.mse},
                 {"w_kl", c.cvae.weights.kl},
                 {"w_ce", c.cvae.weights.ce},
                 {"kl_count_replicas", c.cvae.kl_count_replicas},
                 {"dropout", c.cvae.dropout},
                 {"lr", c.cvae.lr},
                 {"rho", c.cvae.rho},
                 {"eps", c.cvae.eps}};
  doc["isolated"] = {{"epochs", c.isolated.epochs},
                     {"batch", c.isolated.batch},
                     {"dropout", c.isolated.dropout},
                     {"lr", c.isolated.lr},
                     {"tcn_filters", c.isolated.tcn_filters},
                     {"gru_hidden", c.isolated.gru_hidden}};
  doc["ctc"] = {{"enabled", c.ctc.enabled},
                {"epochs", c.ctc.train.epochs},
                {"batch", c.ctc.train.batch},
                {"lr", c.ctc.train.lr},
                {"hidden", c.ctc.train.hidden},
                {"beam_width", c.ctc.beam.beam_width},
                {"lm_weight", c.ctc.beam.lm_weight}};
  return doc;
}

// Canonical single-line echo (keys sorted, shortest round-trip numbers).
inline std::string echo(const RunConfig& c) { return to_json(c).dump(); }

inline RunConfig parse(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return from_json(doc);
}

inline RunConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

// --out beats output_dir in the document, which beats $EEGCVAE_OUT.
inline std::filesystem::path resolve_output_dir(const RunConfig& c, const std::string& flag = "") {
  if (!flag.empty()) return flag;
  if (!c.output_dir.empty()) return c.output_dir;
  const std::string leaf = "run-" + std::to_string(c.seed);
  if (const char* root = std::getenv(kOutputRootEnv); root && *root) return std::filesystem::path(root) / leaf;
  return std::filesystem::path("runs") / leaf;
}

}  // namespace eegcvae::config
