#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "eegcvae/binary_io.hpp"
#include "eegcvae/tensor.hpp"

// Synthetic labeled multichannel recordings.
//
// Every recording is the sum of
//   * a class component: a fixed per-class dictionary of four Hann-windowed
//     8-20 Hz bursts on 8 designated channels. Bursts tile the recording: with
//     slot = duration/4, burst k is 1.5 slots wide and centered at (k+1)*slot,
//     so every window of a quarter recording sees class energy. Frequency,
//     phase and channel gains are random per class; every example of a class
//     shares the template, scaled by a per-example gain in [0.8, 1.2],
//   * class-independent confounds: two 4-7 Hz oscillations with random
//     frequency, phase and per-channel mixing, present on all channels,
//   * white Gaussian noise whose power is set by snr_db relative to the mean
//     class-component power on the designated channels,
//   * a 60 Hz line component of amplitude line_noise_amp.
// The dictionary is drawn from derive_seed(seed, kSynth); example i draws from
// its own sub-stream, so any example can be regenerated in isolation.

namespace eegcvae::synth {

using Eigen::Index;

inline constexpr Index kDesignatedChannels = 8;
inline constexpr int kBurstsPerClass = 4;

struct SynthConfig {
  Index n_examples = 108;
  Index n_classes = 2;
  Index channels = 31;
  double fs_hz = 1000.0;
  double duration_s = 2.0;
  double snr_db = 20.0;
  double line_noise_amp = 0.5;
  double class_amp = 3.0;
  double confound_amp = 0.3;
  std::uint64_t seed = 42;

  void validate() const {
    if (n_classes < 1) throw ConfigError("synth.n_classes must be >= 1");
    if (n_examples < n_classes) throw ConfigError("synth.n_examples must be >= synth.n_classes");
    if (channels < 1) throw ConfigError("synth.channels must be >= 1");
    if (!(fs_hz > 120.0)) throw ConfigError("synth.fs_hz must exceed 120 Hz");
    if (!(duration_s > 0.0)) throw ConfigError("synth.duration_s must be positive");
    if (std::isnan(snr_db)) throw ConfigError("synth.snr_db must not be NaN");
    if (!(line_noise_amp >= 0.0)) throw ConfigError("synth.line_noise_amp must be >= 0");
    if (!(class_amp >= 0.0)) throw ConfigError("synth.class_amp must be >= 0");
    if (!(confound_amp >= 0.0)) throw ConfigError("synth.confound_amp must be >= 0");
  }

  Index sample_count() const { return static_cast<Index>(std::llround(fs_hz * duration_s)); }
};

struct Recording {
  Tensor2 samples;  // channels x N
  double fs_hz = 0.0;
  std::string label;
  Index class_id = 0;
  std::uint64_t seed = 0;  // per-example sub-stream seed
  Index index = 0;         // position in the generated dataset
};

inline std::string class_transcript(Index class_id) {
  static const std::vector<std::string> kSentences = {"open the door", "close the window"};
  if (class_id >= 0 && class_id < static_cast<Index>(kSentences.size())) return kSentences[class_id];
  return "sentence " + std::to_string(class_id);
}

namespace detail {

struct Burst {
  double onset_s;
  double width_s;
  double freq_hz;
  double phase;
  std::vector<double> gains;  // one per designated channel
};

struct Dictionary {
  std::vector<Index> channels;             // designated channel indices
  std::vector<std::vector<Burst>> bursts;  // per class
};

inline Dictionary make_dictionary(const SynthConfig& cfg) {
  Rng rng = make_rng(cfg.seed, streams::kSynth);
  Dictionary d;
  std::vector<Index> perm(static_cast<std::size_t>(cfg.channels));
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  perm.resize(static_cast<std::size_t>(std::min(kDesignatedChannels, cfg.channels)));
  std::sort(perm.begin(), perm.end());
  d.channels = perm;
  for (Index c = 0; c < cfg.n_classes; ++c) {
    std::vector<Burst> bursts;
    for (int k = 0; k < kBurstsPerClass; ++k) {
      Burst b;
      const double slot = cfg.duration_s / kBurstsPerClass;
      b.width_s = 1.5 * slot;
      b.onset_s = (k + 1) * slot - 0.5 * b.width_s;
      b.freq_hz = uniform(rng, 8.0, 20.0);
      b.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      for (std::size_t ch = 0; ch < d.channels.size(); ++ch) b.gains.push_back(uniform(rng, -1.5, 1.5));
      bursts.push_back(std::move(b));
    }
    d.bursts.push_back(std::move(bursts));
  }
  return d;
}

inline Tensor2 render_class(const SynthConfig& cfg, const Dictionary& d, Index class_id) {
  const Index n = cfg.sample_count();
  Tensor2 out = Tensor2::Zero(cfg.channels, n);
  for (const Burst& b : d.bursts[static_cast<std::size_t>(class_id)]) {
    const Index start = static_cast<Index>(std::floor(b.onset_s * cfg.fs_hz));
    const Index len = std::max<Index>(1, static_cast<Index>(std::llround(b.width_s * cfg.fs_hz)));
    for (Index k = 0; k < len && start + k < n; ++k) {
      if (start + k < 0) continue;
      const double t = static_cast<double>(start + k) / cfg.fs_hz;
      const double env = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * (k + 0.5) / len);
      const double v = cfg.class_amp * env * std::sin(2.0 * std::numbers::pi * b.freq_hz * t + b.phase);
      for (std::size_t ch = 0; ch < d.channels.size(); ++ch) out(d.channels[ch], start + k) += b.gains[ch] * v;
    }
  }
  return out;
}

inline double designated_power(const Tensor2& cls, const Dictionary& d) {
  double sum = 0.0;
  for (Index ch : d.channels) sum += cls.row(ch).squaredNorm();
  return sum / static_cast<double>(d.channels.size() * static_cast<std::size_t>(cls.cols()));
}

}  // namespace detail

// Noise-free class component (channels x N) for a class.
inline Tensor2 class_template(const SynthConfig& cfg, Index class_id) {
  cfg.validate();
  if (class_id < 0 || class_id >= cfg.n_classes) throw ParameterError("class id out of range");
  return detail::render_class(cfg, detail::make_dictionary(cfg), class_id);
}

inline std::vector<Index> designated_channels(const SynthConfig& cfg) {
  cfg.validate();
  return detail::make_dictionary(cfg).channels;
}

namespace detail {

inline Recording render_example(const SynthConfig& cfg, const std::vector<Tensor2>& templates,
                                double noise_std, Index i) {
  const Index n = cfg.sample_count();
  Recording r;
  r.index = i;
  r.class_id = i % cfg.n_classes;
  r.label = class_transcript(r.class_id);
  r.fs_hz = cfg.fs_hz;
  r.seed = derive_seed(derive_seed(cfg.seed, streams::kSynth), static_cast<std::uint64_t>(i) + 1);
  Rng rng(r.seed);

  const double gain = uniform(rng, 0.8, 1.2);
  r.samples = templates[static_cast<std::size_t>(r.class_id)] * gain;

  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  for (int k = 0; k < 2; ++k) {
    const double f = uniform(rng, 4.0, 7.0);
    const double ph = uniform(rng, 0.0, kTwoPi);
    const double amp = cfg.confound_amp * uniform(rng, 0.5, 1.5);
    RowVec wave(n);
    for (Index s = 0; s < n; ++s) wave(s) = amp * std::sin(kTwoPi * f * s / cfg.fs_hz + ph);
    for (Index ch = 0; ch < cfg.channels; ++ch) r.samples.row(ch) += uniform(rng, -1.0, 1.0) * wave;
  }

  const double line_phase = uniform(rng, 0.0, kTwoPi);
  if (cfg.line_noise_amp > 0.0) {
    RowVec line(n);
    for (Index s = 0; s < n; ++s) line(s) = cfg.line_noise_amp * std::sin(kTwoPi * 60.0 * s / cfg.fs_hz + line_phase);
    r.samples.rowwise() += line;
  }

  if (noise_std > 0.0) {
    for (Index ch = 0; ch < cfg.channels; ++ch) {
      for (Index s = 0; s < n; ++s) r.samples(ch, s) += noise_std * normal(rng);
    }
  }
  return r;
}

inline double noise_std_for(const SynthConfig& cfg, const std::vector<Tensor2>& templates,
                            const Dictionary& d) {
  if (std::isinf(cfg.snr_db) && cfg.snr_db > 0) return 0.0;
  double p = 0.0;
  for (const auto& t : templates) p += designated_power(t, d);
  p /= static_cast<double>(templates.size());
  if (p <= 0.0) p = 1.0;  // no class signal: unit reference power
  return std::sqrt(p / std::pow(10.0, cfg.snr_db / 10.0));
}

}  // namespace detail

// Example i alone, bit-identical to element i of generate(cfg).
inline Recording generate_one(const SynthConfig& cfg, Index i) {
  cfg.validate();
  if (i < 0 || i >= cfg.n_examples) throw ParameterError("example index out of range");
  const detail::Dictionary d = detail::make_dictionary(cfg);
  std::vector<Tensor2> templates;
  for (Index c = 0; c < cfg.n_classes; ++c) templates.push_back(detail::render_class(cfg, d, c));
  return detail::render_example(cfg, templates, detail::noise_std_for(cfg, templates, d), i);
}

inline std::vector<Recording> generate(const SynthConfig& cfg) {
  cfg.validate();
  const detail::Dictionary d = detail::make_dictionary(cfg);
  std::vector<Tensor2> templates;
  for (Index c = 0; c < cfg.n_classes; ++c) templates.push_back(detail::render_class(cfg, d, c));
  const double noise_std = detail::noise_std_for(cfg, templates, d);
  std::vector<Recording> out;
  out.reserve(static_cast<std::size_t>(cfg.n_examples));
  for (Index i = 0; i < cfg.n_examples; ++i) out.push_back(detail::render_example(cfg, templates, noise_std, i));
  return out;
}

// ---------------------------------------------------------------------------

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle; the first round(train_fraction·n) shuffled indices train.
inline SplitIndices split_indices(std::size_t n, double train_fraction, std::uint64_t seed) {
  if (n == 0) throw ParameterError("split: empty dataset");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ParameterError("split: train_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, streams::kSplit);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  SplitIndices s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  return s;
}

template <typename T>
std::pair<std::vector<T>, std::vector<T>> split(const std::vector<T>& dataset, double train_fraction,
                                                std::uint64_t seed) {
  const SplitIndices s = split_indices(dataset.size(), train_fraction, seed);
  std::pair<std::vector<T>, std::vector<T>> out;
  for (auto i : s.train) out.first.push_back(dataset[i]);
  for (auto i : s.test) out.second.push_back(dataset[i]);
  return out;
}

// ---------------------------------------------------------------------------
// "EEGR" recording file: magic, u32 version, u32 channels, u64 samples, f64 fs,
// then channel-major little-endian f64 samples.

inline constexpr std::uint32_t kRecordingVersion = 1;

inline void save_recording(const Recording& r, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes("EEGR");
  w.u32(kRecordingVersion);
  w.u32(static_cast<std::uint32_t>(r.samples.rows()));
  w.u64(static_cast<std::uint64_t>(r.samples.cols()));
  w.f64(r.fs_hz);
  for (Index i = 0; i < r.samples.size(); ++i) w.f64(r.samples.data()[i]);
  w.save(path);
}

// Loads samples and rate; label metadata lives in the manifest.
inline Recording load_recording(const std::filesystem::path& path) {
  io::Reader rd = io::Reader::open(path);
  rd.expect_magic("EEGR");
  const std::uint32_t version = rd.u32();
  if (version != kRecordingVersion) {
    throw VersionError(path.string() + ": unsupported recording version " + std::to_string(version));
  }
  const std::uint32_t channels = rd.u32();
  const std::uint64_t n = rd.u64();
  Recording r;
  r.fs_hz = rd.f64();
  if (rd.remaining() != channels * n * 8) throw CorruptFileError(path.string() + ": payload size mismatch");
  r.samples.resize(channels, static_cast<Index>(n));
  for (Index i = 0; i < r.samples.size(); ++i) r.samples.data()[i] = rd.f64();
  return r;
}

struct ManifestEntry {
  std::string path;  // relative to the manifest's directory
  std::string label;
  Index class_id = 0;
  std::uint64_t seed = 0;
  std::string split;  // "train" or "test"
};

inline void save_manifest(const std::vector<ManifestEntry>& entries, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "path\tlabel\tclass_id\tseed\tsplit\n";
  for (const auto& e : entries) {
    out << e.path << '\t' << e.label << '\t' << e.class_id << '\t' << e.seed << '\t' << e.split << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "path\tlabel\tclass_id\tseed\tsplit") throw CorruptFileError(path.string() + ": bad manifest header");
  std::vector<ManifestEntry> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, '\t')) fields.push_back(f);
    if (fields.size() != 5) throw CorruptFileError(path.string() + ": malformed manifest row: " + line);
    ManifestEntry e;
    e.path = fields[0];
    e.label = fields[1];
    try {
      e.class_id = std::stoll(fields[2]);
      e.seed = std::stoull(fields[3]);
    } catch (const std::exception&) {
      throw CorruptFileError(path.string() + ": malformed manifest row: " + line);
    }
    e.split = fields[4];
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace eegcvae::synth
