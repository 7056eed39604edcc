#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "eegcvae/synth.hpp"

using namespace eegcvae;
using synth::SynthConfig;

namespace {

SynthConfig small_config() {
  SynthConfig c;
  c.n_examples = 12;
  c.channels = 6;
  c.duration_s = 0.5;
  return c;
}

bool bit_identical(const Tensor2& a, const Tensor2& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

// |DFT|^2 of a row at an arbitrary frequency.
double power_at(const RowVec& x, double f, double fs) {
  std::complex<double> acc = 0.0;
  for (Eigen::Index n = 0; n < x.size(); ++n) acc += x(n) * std::polar(1.0, -2.0 * std::numbers::pi * f * n / fs);
  return std::norm(acc);
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("eegcvae_test_synth_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Synth, DefaultShape) {
  SynthConfig c;
  c.seed = 42;
  const auto recs = synth::generate(c);
  ASSERT_EQ(recs.size(), 108u);
  for (const auto& r : recs) {
    EXPECT_EQ(r.samples.rows(), 31);
    EXPECT_EQ(r.samples.cols(), 2000);
    EXPECT_EQ(r.fs_hz, 1000.0);
    EXPECT_TRUE(r.samples.allFinite());
  }
}

TEST(Synth, ClassesBalanced) {
  for (Eigen::Index classes : {2, 3, 5}) {
    SynthConfig c = small_config();
    c.n_examples = 13;
    c.n_classes = classes;
    std::vector<int> count(static_cast<std::size_t>(classes), 0);
    for (const auto& r : synth::generate(c)) ++count[static_cast<std::size_t>(r.class_id)];
    const auto [lo, hi] = std::minmax_element(count.begin(), count.end());
    EXPECT_LE(*hi - *lo, 1) << classes;
  }
}

TEST(Synth, TranscriptsFollowClass) {
  const auto recs = synth::generate(small_config());
  for (const auto& r : recs) {
    EXPECT_EQ(r.label, r.class_id == 0 ? "open the door" : "close the window");
  }
}

TEST(Synth, SameSeedBitIdentical) {
  const auto a = synth::generate(small_config());
  const auto b = synth::generate(small_config());
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bit_identical(a[i].samples, b[i].samples));
}

TEST(Synth, DifferentSeedsDiffer) {
  SynthConfig c = small_config();
  const auto a = synth::generate(c);
  c.seed += 1;
  const auto b = synth::generate(c);
  bool any = false;
  for (std::size_t i = 0; i < a.size(); ++i) any = any || !bit_identical(a[i].samples, b[i].samples);
  EXPECT_TRUE(any);
}

TEST(Synth, GenerateOneMatchesDataset) {
  const SynthConfig c = small_config();
  const auto all = synth::generate(c);
  for (Eigen::Index i : {0, 5, 11}) {
    const auto one = synth::generate_one(c, i);
    EXPECT_TRUE(bit_identical(one.samples, all[static_cast<std::size_t>(i)].samples));
    EXPECT_EQ(one.seed, all[static_cast<std::size_t>(i)].seed);
  }
  EXPECT_THROW(synth::generate_one(c, 12), ParameterError);
}

TEST(Synth, NoiseFreeIsDeterministicComponentsOnly) {
  SynthConfig c = small_config();
  c.snr_db = std::numeric_limits<double>::infinity();
  c.line_noise_amp = 0.0;
  c.confound_amp = 0.0;
  const auto recs = synth::generate(c);
  // Without noise or confounds each recording is its class template times a gain.
  for (const auto& r : recs) {
    const Tensor2 t = synth::class_template(c, r.class_id);
    const double gain = (r.samples.array() * t.array()).sum() / t.squaredNorm();
    EXPECT_NEAR((r.samples - gain * t).cwiseAbs().maxCoeff(), 0.0, 1e-12);
  }
  c.confound_amp = 1.0;
  const auto again = synth::generate(c);
  const auto repeat = synth::generate(c);
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_TRUE(bit_identical(again[i].samples, repeat[i].samples));
}

TEST(Synth, TemplateCorrelationSeparatesNoiseFreeClasses) {
  SynthConfig c;
  c.snr_db = std::numeric_limits<double>::infinity();
  c.line_noise_amp = 0.0;
  const auto recs = synth::generate(c);
  const auto channels = synth::designated_channels(c);
  std::vector<Tensor2> templates;
  for (Eigen::Index k = 0; k < c.n_classes; ++k) templates.push_back(synth::class_template(c, k));
  auto correlation = [&](const Tensor2& x, const Tensor2& t) {
    double xy = 0.0, xx = 0.0, tt = 0.0;
    for (auto ch : channels) {
      const RowVec a = x.row(ch).array() - x.row(ch).mean();
      const RowVec b = t.row(ch).array() - t.row(ch).mean();
      xy += a.dot(b);
      xx += a.squaredNorm();
      tt += b.squaredNorm();
    }
    return xy / std::sqrt(xx * tt);
  };
  int correct = 0;
  for (const auto& r : recs) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < c.n_classes; ++k) {
      if (correlation(r.samples, templates[k]) > correlation(r.samples, templates[best])) best = k;
    }
    correct += best == r.class_id;
  }
  EXPECT_EQ(correct, static_cast<int>(recs.size()));
}

TEST(Synth, LineNoisePeakAt60Hz) {
  SynthConfig c = small_config();
  c.duration_s = 2.0;
  c.line_noise_amp = 0.5;
  const auto recs = synth::generate(c);
  for (Eigen::Index ch : {0, 3, 5}) {
    const RowVec x = recs[1].samples.row(ch);
    const double p60 = power_at(x, 60.0, c.fs_hz);
    EXPECT_GT(p60, power_at(x, 59.5, c.fs_hz));
    EXPECT_GT(p60, power_at(x, 60.5, c.fs_hz));
  }
}

TEST(Synth, InvalidConfigNamesField) {
  auto expect_field = [](SynthConfig c, const std::string& field) {
    try {
      c.validate();
      ADD_FAILURE() << "no error for " << field;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(field), std::string::npos) << e.what();
    }
  };
  SynthConfig c;
  c.n_examples = 1;
  expect_field(c, "n_examples");
  c = {};
  c.channels = 0;
  expect_field(c, "channels");
  c = {};
  c.fs_hz = 120.0;
  expect_field(c, "fs_hz");
  c = {};
  c.duration_s = 0.0;
  expect_field(c, "duration_s");
  c = {};
  c.line_noise_amp = -1.0;
  expect_field(c, "line_noise_amp");
  EXPECT_THROW(synth::generate(c), ConfigError);
}

TEST(Split, PaperCounts) {
  const auto s = synth::split_indices(108, 0.8, 42);
  EXPECT_EQ(s.train.size(), 86u);
  EXPECT_EQ(s.test.size(), 22u);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  for (auto i : s.test) EXPECT_TRUE(all.insert(i).second) << "overlap at " << i;
  EXPECT_EQ(all.size(), 108u);
  EXPECT_EQ(*all.rbegin(), 107u);
}

TEST(Split, Deterministic) {
  const auto a = synth::split_indices(10, 0.8, 7);
  const auto b = synth::split_indices(10, 0.8, 7);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
}

TEST(Split, HalfOfTwo) {
  const std::vector<int> data{10, 20};
  const auto [train, test] = synth::split(data, 0.5, 3);
  EXPECT_EQ(train.size(), 1u);
  EXPECT_EQ(test.size(), 1u);
  EXPECT_NE(train[0], test[0]);
}

TEST(Split, Errors) {
  EXPECT_THROW(synth::split_indices(0, 0.8, 1), ParameterError);
  EXPECT_THROW(synth::split_indices(10, 0.0, 1), ParameterError);
  EXPECT_THROW(synth::split_indices(10, 1.0, 1), ParameterError);
}

TEST(SynthIo, RecordingRoundTrip) {
  const auto dir = temp_dir("rec");
  const auto r = synth::generate_one(small_config(), 3);
  synth::save_recording(r, dir / "r.eegr");
  const auto back = synth::load_recording(dir / "r.eegr");
  EXPECT_TRUE(bit_identical(r.samples, back.samples));
  EXPECT_EQ(back.fs_hz, r.fs_hz);

  // Truncation and bad magic are rejected.
  const auto size = std::filesystem::file_size(dir / "r.eegr");
  std::filesystem::resize_file(dir / "r.eegr", size - 8);
  EXPECT_THROW(synth::load_recording(dir / "r.eegr"), CorruptFileError);
  {
    std::ofstream out(dir / "bad.eegr", std::ios::binary);
    out << "NOPE0000000000000000000000";
  }
  EXPECT_THROW(synth::load_recording(dir / "bad.eegr"), CorruptFileError);
}

TEST(SynthIo, ManifestRoundTrip) {
  const auto dir = temp_dir("manifest");
  std::vector<synth::ManifestEntry> entries{{"data/rec_0000.eegr", "open the door", 0, 123, "train"},
                                            {"data/rec_0001.eegr", "close the window", 1, 456, "test"}};
  synth::save_manifest(entries, dir / "m.tsv");
  const auto back = synth::load_manifest(dir / "m.tsv");
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].path, entries[1].path);
  EXPECT_EQ(back[1].label, entries[1].label);
  EXPECT_EQ(back[1].class_id, 1);
  EXPECT_EQ(back[1].seed, 456u);
  EXPECT_EQ(back[1].split, "test");
}
