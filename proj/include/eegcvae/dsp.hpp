#pragma once

#include <Eigen/Eigenvalues>

#include <cmath>
#include <complex>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "eegcvae/binary_io.hpp"
#include "eegcvae/synth.hpp"
#include "eegcvae/tensor.hpp"

// Signal conditioning and per-window statistics.
//
// Filters are cascades of short direct-form sections. A Butterworth band-pass
// is realized as a high-pass cascade followed by a low-pass cascade, each
// built from second-order (plus at most one first-order) bilinear sections,
// which stays well conditioned at a 0.1 Hz corner with 1 kHz sampling.

namespace eegcvae::dsp {

using Eigen::Index;

inline constexpr double kStabilityMargin = 1e-9;

// Roots of a[0] + a[1] z^-1 + ... + a[n] z^-n as poles in z.
inline std::vector<std::complex<double>> poles_of(const std::vector<double>& a) {
  const std::size_t order = a.size() - 1;
  if (order == 0) return {};
  if (order == 1) return {std::complex<double>(-a[1] / a[0], 0.0)};
  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(static_cast<Index>(order), static_cast<Index>(order));
  for (std::size_t j = 0; j < order; ++j) companion(0, static_cast<Index>(j)) = -a[j + 1] / a[0];
  for (std::size_t i = 1; i < order; ++i) companion(static_cast<Index>(i), static_cast<Index>(i - 1)) = 1.0;
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion, false);
  std::vector<std::complex<double>> out;
  for (Index i = 0; i < solver.eigenvalues().size(); ++i) out.push_back(solver.eigenvalues()(i));
  return out;
}

struct Section {
  std::vector<double> b;  // feedforward
  std::vector<double> a;  // feedback, a[0] == 1
};

class IirFilter {
 public:
  // Single section from raw coefficients; a is normalized so that a[0] = 1.
  static IirFilter from_coefficients(std::vector<double> b, std::vector<double> a) {
    return IirFilter({Section{std::move(b), std::move(a)}});
  }

  explicit IirFilter(std::vector<Section> sections) : sections_(std::move(sections)) {
    if (sections_.empty()) throw ParameterError("filter needs at least one section");
    for (Section& s : sections_) {
      if (s.b.empty() || s.a.empty()) throw ParameterError("filter coefficient lists must be non-empty");
      if (s.a[0] == 0.0) throw ParameterError("filter a[0] must be non-zero");
      const double a0 = s.a[0];
      for (double& v : s.b) v /= a0;
      for (double& v : s.a) v /= a0;
      for (const auto& p : poles_of(s.a)) {
        if (!(std::abs(p) < 1.0 - kStabilityMargin)) {
          throw ParameterError("unstable filter: pole magnitude " + std::to_string(std::abs(p)));
        }
      }
    }
  }

  // Series connection: this filter followed by `next`.
  IirFilter then(const IirFilter& next) const {
    std::vector<Section> all = sections_;
    all.insert(all.end(), next.sections_.begin(), next.sections_.end());
    return IirFilter(std::move(all));
  }

  const std::vector<Section>& sections() const { return sections_; }

  // Expanded single transfer function (b, a) of the whole cascade.
  std::pair<std::vector<double>, std::vector<double>> polynomials() const {
    auto conv = [](const std::vector<double>& x, const std::vector<double>& y) {
      std::vector<double> out(x.size() + y.size() - 1, 0.0);
      for (std::size_t i = 0; i < x.size(); ++i)
        for (std::size_t j = 0; j < y.size(); ++j) out[i + j] += x[i] * y[j];
      return out;
    };
    std::vector<double> b{1.0}, a{1.0};
    for (const Section& s : sections_) {
      b = conv(b, s.b);
      a = conv(a, s.a);
    }
    return {b, a};
  }

  std::vector<std::complex<double>> poles() const {
    std::vector<std::complex<double>> out;
    for (const Section& s : sections_) {
      auto p = poles_of(s.a);
      out.insert(out.end(), p.begin(), p.end());
    }
    return out;
  }

  bool stable() const {
    for (const auto& p : poles()) {
      if (!(std::abs(p) < 1.0 - kStabilityMargin)) return false;
    }
    return true;
  }

  // H(e^{jw}) at frequency f_hz.
  std::complex<double> response(double f_hz, double fs_hz) const {
    const double w = 2.0 * std::numbers::pi * f_hz / fs_hz;
    const std::complex<double> zinv = std::polar(1.0, -w);
    std::complex<double> h(1.0, 0.0);
    for (const Section& s : sections_) {
      std::complex<double> num(0.0), den(0.0), zk(1.0);
      for (std::size_t k = 0; k < std::max(s.b.size(), s.a.size()); ++k) {
        if (k < s.b.size()) num += s.b[k] * zk;
        if (k < s.a.size()) den += s.a[k] * zk;
        zk *= zinv;
      }
      h *= num / den;
    }
    return h;
  }

  double gain_db(double f_hz, double fs_hz) const { return 20.0 * std::log10(std::abs(response(f_hz, fs_hz))); }

 private:
  std::vector<Section> sections_;
};

namespace detail {

inline void check_cutoff(double f, double fs_hz, const char* what) {
  if (!(fs_hz > 0.0)) throw ParameterError("sampling rate must be positive");
  if (!(f > 0.0 && f < fs_hz / 2.0)) {
    throw ParameterError(std::string(what) + " must lie strictly between 0 and Nyquist");
  }
}

// Butterworth low-pass or high-pass of the given order via the bilinear
// transform with frequency prewarping.
inline std::vector<Section> butterworth_sections(double fc, double fs_hz, int order, bool highpass) {
  const double k = std::tan(std::numbers::pi * fc / fs_hz);
  std::vector<Section> out;
  for (int i = 0; i < order / 2; ++i) {
    const double theta = std::numbers::pi * (2.0 * i + 1.0) / (2.0 * order);
    const double q = 1.0 / (2.0 * std::sin(theta));
    const double norm = 1.0 / (1.0 + k / q + k * k);
    const double a1 = 2.0 * (k * k - 1.0) * norm;
    const double a2 = (1.0 - k / q + k * k) * norm;
    if (highpass) {
      out.push_back({{norm, -2.0 * norm, norm}, {1.0, a1, a2}});
    } else {
      const double b0 = k * k * norm;
      out.push_back({{b0, 2.0 * b0, b0}, {1.0, a1, a2}});
    }
  }
  if (order % 2 == 1) {
    const double a1 = (k - 1.0) / (k + 1.0);
    if (highpass) {
      const double b0 = 1.0 / (1.0 + k);
      out.push_back({{b0, -b0}, {1.0, a1}});
    } else {
      const double b0 = k / (1.0 + k);
      out.push_back({{b0, b0}, {1.0, a1}});
    }
  }
  return out;
}

}  // namespace detail

// Band-pass of total order `order`: order/2 high-pass at low_hz cascaded with
// order/2 low-pass at high_hz.
inline IirFilter design_bandpass(double low_hz, double high_hz, int order, double fs_hz) {
  detail::check_cutoff(low_hz, fs_hz, "low cutoff");
  detail::check_cutoff(high_hz, fs_hz, "high cutoff");
  if (!(low_hz < high_hz)) throw ParameterError("band-pass requires low cutoff < high cutoff");
  if (order < 2 || order % 2 != 0) throw ParameterError("band-pass order must be even and >= 2");
  std::vector<Section> s = detail::butterworth_sections(low_hz, fs_hz, order / 2, true);
  const std::vector<Section> lp = detail::butterworth_sections(high_hz, fs_hz, order / 2, false);
  s.insert(s.end(), lp.begin(), lp.end());
  return IirFilter(std::move(s));
}

// Second-order notch (zeros on the unit circle at f0, bandwidth f0/q).
inline IirFilter design_notch(double f0_hz, double q, double fs_hz) {
  detail::check_cutoff(f0_hz, fs_hz, "notch frequency");
  if (!(q > 0.0)) throw ParameterError("notch q must be positive");
  const double w0 = 2.0 * std::numbers::pi * f0_hz / fs_hz;
  const double alpha = std::sin(w0) / (2.0 * q);
  const double c = std::cos(w0);
  return IirFilter::from_coefficients({1.0, -2.0 * c, 1.0}, {1.0 + alpha, -2.0 * c, 1.0 - alpha});
}

// Causal filtering, transposed direct form II per section, zero initial state.
inline std::vector<double> apply_filter(const IirFilter& filter, std::span<const double> signal) {
  std::vector<double> y(signal.begin(), signal.end());
  for (const Section& s : filter.sections()) {
    const std::size_t n = std::max(s.b.size(), s.a.size());
    std::vector<double> b = s.b, a = s.a;
    b.resize(n, 0.0);
    a.resize(n, 0.0);
    std::vector<double> state(n, 0.0);  // state[n-1] stays 0
    for (double& v : y) {
      const double x = v;
      const double out = b[0] * x + state[0];
      for (std::size_t k = 1; k < n; ++k) {
        state[k - 1] = b[k] * x - a[k] * out + (k < n - 1 ? state[k] : 0.0);
      }
      v = out;
    }
  }
  return y;
}

struct FilterSettings {
  double band_low_hz = 0.1;
  double band_high_hz = 70.0;
  int band_order = 4;
  double notch_hz = 60.0;
  double notch_q = 30.0;
};

inline IirFilter design_preprocessing_filter(const FilterSettings& s, double fs_hz) {
  return design_bandpass(s.band_low_hz, s.band_high_hz, s.band_order, fs_hz)
      .then(design_notch(s.notch_hz, s.notch_q, fs_hz));
}

// Filters every channel of a recording.
inline synth::Recording filter_recording(const synth::Recording& rec, const IirFilter& filter) {
  synth::Recording out = rec;
  for (Index ch = 0; ch < rec.samples.rows(); ++ch) {
    const RowVec row = rec.samples.row(ch);
    const std::vector<double> y = apply_filter(filter, std::span<const double>(row.data(), row.size()));
    for (Index s = 0; s < rec.samples.cols(); ++s) out.samples(ch, s) = y[static_cast<std::size_t>(s)];
  }
  return out;
}

// ---------------------------------------------------------------------------

inline constexpr Index kStatsPerChannel = 5;
inline constexpr double kFrameRateHz = 100.0;

struct WindowStats {
  double rms = 0.0;
  double zcr = 0.0;
  double mean = 0.0;
  double kurtosis = 0.0;          // excess, biased estimator
  double spectral_entropy = 0.0;  // normalized to [0, 1]
};

inline WindowStats window_stats(std::span<const double> x) {
  const std::size_t w = x.size();
  if (w < 2) throw ParameterError("window_stats needs at least 2 samples");
  const double n = static_cast<double>(w);
  WindowStats s;
  double sum = 0.0, sq = 0.0;
  for (double v : x) {
    sum += v;
    sq += v * v;
  }
  s.mean = sum / n;
  s.rms = std::sqrt(sq / n);

  std::size_t changes = 0;
  for (std::size_t i = 1; i < w; ++i) changes += (x[i - 1] * x[i] < 0.0) ? 1 : 0;
  s.zcr = static_cast<double>(changes) / static_cast<double>(w - 1);

  double m2 = 0.0, m4 = 0.0;
  for (double v : x) {
    const double d = v - s.mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m4 /= n;
  s.kurtosis = m2 < 1e-12 ? 0.0 : m4 / (m2 * m2) - 3.0;

  // Power in DFT bins 0..floor(w/2).
  const std::size_t bins = w / 2 + 1;
  std::vector<double> power(bins, 0.0);
  double total = 0.0;
  for (std::size_t k = 0; k < bins; ++k) {
    double re = 0.0, im = 0.0;
    for (std::size_t t = 0; t < w; ++t) {
      const double ang = -2.0 * std::numbers::pi * static_cast<double>(k * t % w) / n;
      re += x[t] * std::cos(ang);
      im += x[t] * std::sin(ang);
    }
    power[k] = re * re + im * im;
    total += power[k];
  }
  if (total > 0.0 && bins > 1) {
    double h = 0.0;
    for (double p : power) {
      if (p <= 0.0) continue;
      const double q = p / total;
      h -= q * std::log(q);
    }
    s.spectral_entropy = std::clamp(h / std::log(static_cast<double>(bins)), 0.0, 1.0);
  }
  return s;
}

struct FeatureSequence {
  Tensor2 frames;  // T x D
  double frame_rate_hz = kFrameRateHz;

  Index length() const { return frames.rows(); }
  Index dim() const { return frames.cols(); }
};

// Non-overlapping windows of fs/100 samples; per window the five statistics
// of every channel, concatenated channel-major.
inline FeatureSequence extract_features(const Tensor2& samples, double fs_hz) {
  const double per_frame = fs_hz / kFrameRateHz;
  const auto win = static_cast<Index>(std::llround(per_frame));
  if (win < 2 || std::abs(per_frame - static_cast<double>(win)) > 1e-9) {
    throw ParameterError("sampling rate must be a multiple of 100 Hz (and at least 200 Hz)");
  }
  const Index channels = samples.rows();
  const Index frames = samples.cols() / win;
  FeatureSequence out;
  out.frames.resize(frames, channels * kStatsPerChannel);
  for (Index t = 0; t < frames; ++t) {
    for (Index ch = 0; ch < channels; ++ch) {
      const double* start = samples.data() + ch * samples.cols() + t * win;
      const WindowStats s = window_stats(std::span<const double>(start, static_cast<std::size_t>(win)));
      const Index base = ch * kStatsPerChannel;
      out.frames(t, base + 0) = s.rms;
      out.frames(t, base + 1) = s.zcr;
      out.frames(t, base + 2) = s.mean;
      out.frames(t, base + 3) = s.kurtosis;
      out.frames(t, base + 4) = s.spectral_entropy;
    }
  }
  return out;
}

inline FeatureSequence extract_features(const synth::Recording& rec) {
  return extract_features(rec.samples, rec.fs_hz);
}

// ---------------------------------------------------------------------------
// "FEAT" file: magic, u32 version, u64 T, u64 D, f64 frame rate, then
// row-major little-endian f64 frames.

inline constexpr std::uint32_t kFeatureVersion = 1;

inline void save_features(const FeatureSequence& f, const std::filesystem::path& path) {
  io::Writer w;
  w.bytes("FEAT");
  w.u32(kFeatureVersion);
  w.u64(static_cast<std::uint64_t>(f.frames.rows()));
  w.u64(static_cast<std::uint64_t>(f.frames.cols()));
  w.f64(f.frame_rate_hz);
  for (Index i = 0; i < f.frames.size(); ++i) w.f64(f.frames.data()[i]);
  w.save(path);
}

inline FeatureSequence load_features(const std::filesystem::path& path) {
  io::Reader rd = io::Reader::open(path);
  rd.expect_magic("FEAT");
  const std::uint32_t version = rd.u32();
  if (version != kFeatureVersion) {
    throw VersionError(path.string() + ": unsupported feature version " + std::to_string(version));
  }
  const std::uint64_t t = rd.u64();
  const std::uint64_t d = rd.u64();
  FeatureSequence f;
  f.frame_rate_hz = rd.f64();
  if (rd.remaining() != t * d * 8) throw CorruptFileError(path.string() + ": payload size mismatch");
  f.frames.resize(static_cast<Index>(t), static_cast<Index>(d));
  for (Index i = 0; i < f.frames.size(); ++i) f.frames.data()[i] = rd.f64();
  return f;
}

}  // namespace eegcvae::dsp
