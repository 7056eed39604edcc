#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "eegcvae/asr.hpp"
#include "eegcvae/checkpoint.hpp"
#include "eegcvae/config.hpp"
#include "eegcvae/cvae.hpp"
#include "eegcvae/dsp.hpp"
#include "eegcvae/kpca.hpp"
#include "eegcvae/synth.hpp"

// End-to-end orchestration. The in-memory functions compose the modules; the
// stage_* functions wrap them with the on-disk run layout:
//
//   <out>/run_manifest.json          config echo, derived seeds, stage notes
//   <out>/data/rec_NNNN.eegr         raw recordings
//   <out>/data/manifest.tsv          path, label, class_id, seed, split
//   <out>/features/<kind>/rec_NNNN.feat   kind = raw-155 | baseline-30 | vae-1
//   <out>/models/*.ckpt
//   <out>/curves/*.csv
//   <out>/reports/*.csv              one file per evaluation
//   <out>/transcripts/*.txt
//   <out>/report.csv, <out>/summary.txt

namespace eegcvae::pipeline {

namespace fs = std::filesystem;
using Eigen::Index;
using json = nlohmann::json;
using config::RunConfig;

inline constexpr const char* kRaw = "raw-155";
inline constexpr const char* kBaseline = "baseline-30";
inline constexpr const char* kVae = "vae-1";

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Seeds.

struct StageSeeds {
  std::uint64_t root = 0;
  std::uint64_t synth = 0;
  std::uint64_t split = 0;
  std::uint64_t cvae = 0;
  std::uint64_t isolated_baseline = 0;
  std::uint64_t isolated_vae = 0;
  std::uint64_t ctc_baseline = 0;
  std::uint64_t ctc_vae = 0;

  static StageSeeds derive(std::uint64_t root) {
    return {root,
            derive_seed(root, streams::kSynth),
            derive_seed(root, streams::kSplit),
            derive_seed(root, streams::kCvae),
            derive_seed(root, streams::kIsolatedBaseline),
            derive_seed(root, streams::kIsolatedVae),
            derive_seed(root, streams::kCtcBaseline),
            derive_seed(root, streams::kCtcVae)};
  }

  std::uint64_t isolated(const std::string& kind) const { return kind == kVae ? isolated_vae : isolated_baseline; }
  std::uint64_t ctc(const std::string& kind) const { return kind == kVae ? ctc_vae : ctc_baseline; }

  json to_json() const {
    return {{"root", root},
            {"synth", synth},
            {"split", split},
            {"train-cvae", cvae},
            {"train-isolated/baseline-30", isolated_baseline},
            {"train-isolated/vae-1", isolated_vae},
            {"train-ctc/baseline-30", ctc_baseline},
            {"train-ctc/vae-1", ctc_vae}};
  }
};

inline std::string run_id(const RunConfig& cfg) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : config::echo(cfg)) {
    h ^= ch;
    h *= 0x100000001B3ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "run-%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// In-memory stages.

struct Corpus {
  std::vector<Tensor2> features;  // per recording, T x D
  std::vector<Index> labels;
  std::vector<std::string> transcripts;
  synth::SplitIndices split;
};

// Identity of a recording is (index, seed); train and test must not share one.
inline void assert_disjoint(const synth::SplitIndices& split, std::size_t n) {
  std::set<std::size_t> seen;
  for (auto i : split.train) {
    if (i >= n || !seen.insert(i).second) throw StageError("split", "train set holds an invalid or repeated recording");
  }
  for (auto i : split.test) {
    if (i >= n) throw StageError("split", "test index out of range");
    if (!seen.insert(i).second) {
      throw StageError("split", "recording " + std::to_string(i) + " appears in both train and test");
    }
  }
  if (seen.size() != n) throw StageError("split", "train and test do not cover the dataset");
}

inline void assert_disjoint(const std::vector<synth::ManifestEntry>& entries) {
  std::set<std::pair<std::string, std::uint64_t>> train;
  for (const auto& e : entries) {
    if (e.split == "train") train.insert({e.path, e.seed});
  }
  for (const auto& e : entries) {
    if (e.split == "test" && train.count({e.path, e.seed})) {
      throw StageError("split", "recording " + e.path + " appears in both train and test");
    }
    if (e.split != "train" && e.split != "test") throw StageError("split", "unknown split tag '" + e.split + "'");
  }
}

inline std::vector<Tensor2> preprocess_all(const std::vector<synth::Recording>& recs,
                                           const dsp::FilterSettings& settings) {
  std::vector<Tensor2> out;
  if (recs.empty()) return out;
  const dsp::IirFilter filter = dsp::design_preprocessing_filter(settings, recs.front().fs_hz);
  out.reserve(recs.size());
  for (const auto& r : recs) {
    if (r.fs_hz != recs.front().fs_hz) throw ParameterError("recordings with differing sampling rates");
    out.push_back(dsp::extract_features(dsp::filter_recording(r, filter)).frames);
  }
  return out;
}

// Per-column z-score fitted on training frames; constant columns pass through centered.
struct Standardizer {
  RowVec mean;
  RowVec scale;

  static Standardizer fit(const Tensor2& frames) {
    if (frames.rows() < 1) throw ParameterError("standardizer: no frames");
    Standardizer s;
    s.mean = frames.colwise().mean();
    const Tensor2 centered = frames.rowwise() - s.mean;
    s.scale = (centered.colwise().squaredNorm() / static_cast<double>(frames.rows())).cwiseSqrt();
    for (Index j = 0; j < s.scale.size(); ++j) {
      if (!(s.scale(j) > 1e-12)) s.scale(j) = 1.0;
    }
    return s;
  }

  Tensor2 apply(const Tensor2& x) const {
    require_cols(x, mean.size(), "standardizer input");
    Tensor2 y = x.rowwise() - mean;
    y.array().rowwise() /= scale.array();
    return y;
  }
};

inline Tensor2 stack_frames(const std::vector<Tensor2>& seqs, const std::vector<std::size_t>& idx) {
  Index rows = 0;
  for (auto i : idx) rows += seqs[i].rows();
  if (idx.empty()) throw ParameterError("no sequences to stack");
  Tensor2 out(rows, seqs[idx.front()].cols());
  Index r = 0;
  for (auto i : idx) {
    out.middleRows(r, seqs[i].rows()) = seqs[i];
    r += seqs[i].rows();
  }
  return out;
}

struct KpcaStage {
  Standardizer input;
  kpca::KpcaModel model;
  Standardizer output;

  Tensor2 project(const Tensor2& seq) const { return output.apply(kpca::transform_rows(model, input.apply(seq))); }
};

inline KpcaStage fit_kpca_stage(const std::vector<Tensor2>& seqs, const std::vector<std::size_t>& train,
                                const config::KpcaSettings& s) {
  KpcaStage st;
  const Tensor2 frames = stack_frames(seqs, train);
  st.input = Standardizer::fit(frames);
  const Tensor2 z = st.input.apply(frames);
  st.model = kpca::fit(z, s.out_dim, {s.degree, s.scale, s.offset}, s.max_fit_frames);
  st.output = Standardizer::fit(kpca::transform_rows(st.model, z));
  return st;
}

inline std::vector<Tensor2> project_all(const KpcaStage& st, const std::vector<Tensor2>& seqs) {
  std::vector<Tensor2> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(st.project(s));
  return out;
}

struct LengthReport {
  Index seq_len = 0;
  Index padded = 0;
  Index truncated = 0;
};

inline Index configured_seq_len(const RunConfig& cfg) {
  return static_cast<Index>(std::floor(cfg.synth.duration_s * dsp::kFrameRateHz + 1e-9));
}

inline Tensor2 fit_to(const Tensor2& seq, Index length, LengthReport* report) {
  if (report) {
    if (seq.rows() < length) ++report->padded;
    if (seq.rows() > length) ++report->truncated;
  }
  return fit_length(seq, length);
}

inline cvae::TrainResult train_cvae_on(const Corpus& c, const cvae::TrainConfig& tc, Index seq_len, Index n_classes,
                                       std::uint64_t seed, LengthReport* report = nullptr) {
  if (report) *report = {seq_len, 0, 0};
  std::vector<cvae::Example> data;
  for (auto i : c.split.train) data.push_back({fit_to(c.features[i], seq_len, report), c.labels[i]});
  if (data.empty()) throw ParameterError("empty training split");
  cvae::CvaeShape shape;
  shape.seq_len = seq_len;
  shape.feature_dim = data.front().features.cols();
  shape.n_classes = n_classes;
  Rng init_rng = make_rng(seed, 0x1A17);
  return cvae::train_joint(cvae::CvaeParams::init(shape, init_rng), data, tc, seed);
}

inline std::vector<Tensor2> extract_all(const cvae::CvaeParams& p, const std::vector<Tensor2>& seqs) {
  std::vector<Tensor2> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(cvae::extract_dim1(p, fit_length(s, p.seq_len())));
  return out;
}

// z-scores each time position of T x 1 sequences over the training sequences, in place.
inline Standardizer standardize_positions(std::vector<Tensor2>& seqs, const std::vector<std::size_t>& train) {
  if (train.empty()) throw ParameterError("no training sequences");
  const Index steps = seqs[train.front()].rows();
  Tensor2 rows(static_cast<Index>(train.size()), steps);
  for (std::size_t k = 0; k < train.size(); ++k) {
    require_shape(seqs[train[k]], steps, 1, "extracted sequence");
    rows.row(static_cast<Index>(k)) = seqs[train[k]].col(0).transpose();
  }
  const Standardizer z = Standardizer::fit(rows);
  for (auto& s : seqs) {
    require_shape(s, steps, 1, "extracted sequence");
    s = z.apply(s.transpose()).transpose();
  }
  return z;
}

inline std::vector<asr::IsolatedExample> isolated_examples(const Corpus& c, const std::vector<std::size_t>& idx,
                                                           Index seq_len) {
  std::vector<asr::IsolatedExample> out;
  for (auto i : idx) out.push_back({fit_length(c.features[i], seq_len), c.labels[i]});
  return out;
}

struct IsolatedEval {
  double accuracy = 0.0;
  std::vector<Index> predicted;
  std::vector<Index> truth;
};

inline IsolatedEval eval_isolated_on(const asr::IsolatedModel& m, const Corpus& c, Index seq_len) {
  IsolatedEval e;
  for (const auto& ex : isolated_examples(c, c.split.test, seq_len)) {
    e.predicted.push_back(asr::predict(m, ex.features));
    e.truth.push_back(ex.label);
  }
  e.accuracy = asr::accuracy(e.predicted, e.truth);
  return e;
}

inline std::vector<asr::CtcExample> ctc_examples(const Corpus& c, const std::vector<std::size_t>& idx, Index seq_len) {
  std::vector<asr::CtcExample> out;
  for (auto i : idx) out.push_back({fit_length(c.features[i], seq_len), c.transcripts[i]});
  return out;
}

struct CtcEval {
  double wer_greedy = 0.0;
  double wer_beam = 0.0;
  std::vector<std::string> references;
  std::vector<std::string> greedy;
  std::vector<std::string> beam;
};

inline CtcEval eval_ctc_on(const asr::CtcModel& m, const asr::BigramLm& lm, const asr::BeamOptions& opt,
                           const Corpus& c, Index seq_len) {
  CtcEval e;
  for (const auto& ex : ctc_examples(c, c.split.test, seq_len)) {
    const Tensor2 lp = asr::ctc_log_probs(m, ex.features);
    e.references.push_back(asr::join_words(asr::split_words(ex.transcript)));
    e.greedy.push_back(m.vocab.decode(asr::ctc_greedy_decode(lp)));
    e.beam.push_back(m.vocab.decode(asr::ctc_beam_decode(lp, &lm, opt)));
  }
  e.wer_greedy = asr::corpus_wer(e.references, e.greedy);
  e.wer_beam = asr::corpus_wer(e.references, e.beam);
  return e;
}

// ---------------------------------------------------------------------------
// KPCA stage persistence.

inline ckpt::Checkpoint kpca_checkpoint(const KpcaStage& st, std::uint64_t seed, std::string echo) {
  ckpt::Checkpoint c{ckpt::kind::kKpca, seed, std::move(echo), {}, {}};
  const auto& m = st.model;
  c.add("input.mean", st.input.mean);
  c.add("input.scale", st.input.scale);
  c.add("training_points", m.training_points);
  c.add("alphas", m.alphas);
  c.add("eigenvalues", m.eigenvalues);
  c.add("spectrum", m.spectrum);
  c.add("train_row_means", m.train_row_means);
  Tensor2 scalars(1, 5);
  scalars << static_cast<double>(m.kernel.degree), m.kernel.scale, m.kernel.offset, m.train_total_mean,
      static_cast<double>(m.source_points);
  c.add("kernel", scalars);
  c.add("output.mean", st.output.mean);
  c.add("output.scale", st.output.scale);
  return c;
}

inline KpcaStage kpca_from_checkpoint(const ckpt::Checkpoint& c) {
  if (c.kind != ckpt::kind::kKpca) throw KindError("checkpoint holds a '" + c.kind + "' model, expected 'kpca'");
  KpcaStage st;
  st.input.mean = c.block("input.mean");
  st.input.scale = c.block("input.scale");
  auto& m = st.model;
  m.training_points = c.block("training_points");
  m.alphas = c.block("alphas");
  m.eigenvalues = c.block("eigenvalues");
  m.spectrum = c.block("spectrum");
  m.train_row_means = c.block("train_row_means");
  const Tensor2& k = c.block("kernel");
  if (k.size() != 5) throw CorruptFileError("kpca checkpoint: malformed kernel block");
  m.kernel.degree = static_cast<int>(k(0, 0));
  m.kernel.scale = k(0, 1);
  m.kernel.offset = k(0, 2);
  m.train_total_mean = k(0, 3);
  m.source_points = static_cast<Index>(k(0, 4));
  st.output.mean = c.block("output.mean");
  st.output.scale = c.block("output.scale");
  return st;
}

// ---------------------------------------------------------------------------
// On-disk layout.

struct RunDir {
  fs::path root;

  fs::path manifest() const { return root / "run_manifest.json"; }
  fs::path data() const { return root / "data"; }
  fs::path data_manifest() const { return data() / "manifest.tsv"; }
  fs::path features(const std::string& kind) const { return root / "features" / kind; }
  fs::path models() const { return root / "models"; }
  fs::path model(const std::string& name) const { return models() / (name + ".ckpt"); }
  fs::path curves() const { return root / "curves"; }
  fs::path reports() const { return root / "reports"; }
  fs::path transcripts() const { return root / "transcripts"; }
  fs::path report_csv() const { return root / "report.csv"; }
  fs::path summary() const { return root / "summary.txt"; }
};

// Creates the directory and proves it accepts writes.
inline void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("output directory " + dir.string() + " cannot be created");
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream out(probe, std::ios::trunc);
    out << "ok";
    if (!out) throw IoError("output directory " + dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

inline void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

inline void write_text(const fs::path& p, const std::string& text) {
  make_dir(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + p.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + p.string());
}

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline json read_run_manifest(const RunDir& d) {
  if (!fs::exists(d.manifest())) return json::object();
  try {
    return json::parse(read_text(d.manifest()));
  } catch (const json::parse_error& e) {
    throw CorruptFileError(d.manifest().string() + ": " + e.what());
  }
}

inline void note_stage(const RunDir& d, const RunConfig& cfg, const std::string& stage, json info) {
  json m = read_run_manifest(d);
  m["run_id"] = run_id(cfg);
  m["config"] = config::to_json(cfg);
  m["seeds"] = StageSeeds::derive(cfg.seed).to_json();
  m["stages"][stage] = std::move(info);
  write_text(d.manifest(), m.dump(2) + "\n");
}

inline std::string recording_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "rec_%04zu", i);
  return buf;
}

// Rebuilds a corpus of one feature kind from the data manifest.
inline Corpus load_corpus(const RunDir& d, const std::string& kind) {
  const auto entries = synth::load_manifest(d.data_manifest());
  assert_disjoint(entries);
  Corpus c;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const fs::path stem = fs::path(e.path).stem();
    c.features.push_back(dsp::load_features(d.features(kind) / (stem.string() + ".feat")).frames);
    c.labels.push_back(e.class_id);
    c.transcripts.push_back(e.label);
    (e.split == "train" ? c.split.train : c.split.test).push_back(i);
  }
  assert_disjoint(c.split, entries.size());
  return c;
}

inline void save_corpus_features(const RunDir& d, const std::string& kind, const std::vector<Tensor2>& seqs) {
  make_dir(d.features(kind));
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    dsp::save_features({seqs[i], dsp::kFrameRateHz}, d.features(kind) / (recording_stem(i) + ".feat"));
  }
}

template <typename F>
auto run_stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, e.what());
  }
}

// ---------------------------------------------------------------------------
// Disk-backed stages.

inline void stage_synth(const RunConfig& cfg, const RunDir& d) {
  run_stage("synth", [&] {
    make_dir(d.data());
    const auto recs = synth::generate(cfg.synth_config());
    const auto split = synth::split_indices(recs.size(), cfg.split_fraction, cfg.seed);
    assert_disjoint(split, recs.size());
    std::vector<std::string> tag(recs.size());
    for (auto i : split.train) tag[i] = "train";
    for (auto i : split.test) tag[i] = "test";
    std::vector<synth::ManifestEntry> entries;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const std::string file = recording_stem(i) + ".eegr";
      synth::save_recording(recs[i], d.data() / file);
      entries.push_back({file, recs[i].label, recs[i].class_id, recs[i].seed, tag[i]});
    }
    synth::save_manifest(entries, d.data_manifest());
    note_stage(d, cfg, "synth",
               {{"recordings", recs.size()}, {"train", split.train.size()}, {"test", split.test.size()}});
  });
}

inline void stage_preprocess(const RunConfig& cfg, const RunDir& d) {
  run_stage("preprocess", [&] {
    const auto entries = synth::load_manifest(d.data_manifest());
    std::vector<synth::Recording> recs;
    for (const auto& e : entries) recs.push_back(synth::load_recording(d.data() / e.path));
    const auto seqs = preprocess_all(recs, cfg.filter);
    save_corpus_features(d, kRaw, seqs);
    note_stage(d, cfg, "preprocess",
               {{"feature_dim", seqs.empty() ? 0 : seqs.front().cols()},
                {"frames_per_recording", seqs.empty() ? 0 : seqs.front().rows()}});
  });
}

inline void stage_kpca(const RunConfig& cfg, const RunDir& d) {
  run_stage("kpca", [&] {
    const Corpus raw = load_corpus(d, kRaw);
    const KpcaStage st = fit_kpca_stage(raw.features, raw.split.train, cfg.kpca);
    make_dir(d.models());
    ckpt::save(kpca_checkpoint(st, cfg.seed, config::echo(cfg)), d.model("kpca"));
    save_corpus_features(d, kBaseline, project_all(st, raw.features));
    std::string ev = "component,cumulative_explained_variance\n";
    const auto cum = kpca::explained_variance(st.model);
    for (std::size_t j = 0; j < cum.size(); ++j) ev += std::to_string(j + 1) + "," + fmt(cum[j]) + "\n";
    write_text(d.curves() / "kpca_explained_variance.csv", ev);
    const std::size_t out_dim = static_cast<std::size_t>(cfg.kpca.out_dim);
    note_stage(d, cfg, "kpca",
               {{"source_frames", st.model.source_points},
                {"fit_frames", st.model.training_points.rows()},
                {"frame_selection", st.model.source_points > st.model.training_points.rows() ? "strided" : "all"},
                {"out_dim", cfg.kpca.out_dim},
                {"explained_variance_at_out_dim", cum.size() >= out_dim ? cum[out_dim - 1] : 1.0}});
  });
}

inline void stage_train_cvae(const RunConfig& cfg, const RunDir& d) {
  run_stage("train-cvae", [&] {
    const Corpus c = load_corpus(d, kBaseline);
    LengthReport lr;
    const auto seeds = StageSeeds::derive(cfg.seed);
    const cvae::TrainResult r =
        train_cvae_on(c, cfg.cvae, configured_seq_len(cfg), cfg.synth.n_classes, seeds.cvae, &lr);
    make_dir(d.models());
    ckpt::save(ckpt::from_cvae(r.params, seeds.cvae, config::echo(cfg)), d.model("cvae"));
    std::string csv = "epoch,mse,kl,ce,net\n";
    for (std::size_t e = 0; e < r.curve.size(); ++e) {
      const auto& l = r.curve[e];
      csv += std::to_string(e + 1) + "," + fmt(l.mse) + "," + fmt(l.kl) + "," + fmt(l.asr_ce) + "," + fmt(l.net) + "\n";
    }
    write_text(d.curves() / "cvae_loss.csv", csv);
    note_stage(d, cfg, "train-cvae",
               {{"seq_len", lr.seq_len}, {"padded", lr.padded}, {"truncated", lr.truncated}, {"epochs", r.curve.size()}});
  });
}

inline void stage_extract(const RunConfig& cfg, const RunDir& d) {
  run_stage("extract", [&] {
    const Corpus c = load_corpus(d, kBaseline);
    const cvae::CvaeParams p = ckpt::to_cvae(ckpt::load(d.model("cvae"), ckpt::kind::kCvae));
    auto dim1 = extract_all(p, c.features);
    const Standardizer z = standardize_positions(dim1, c.split.train);
    save_corpus_features(d, kVae, dim1);
    note_stage(d, cfg, "extract",
               {{"feature_dim", dim1.empty() ? 0 : dim1.front().cols()},
                {"position_mean", std::vector<double>(z.mean.data(), z.mean.data() + z.mean.size())},
                {"position_scale", std::vector<double>(z.scale.data(), z.scale.data() + z.scale.size())}});
  });
}

inline void check_kind(const std::string& kind) {
  if (kind != kBaseline && kind != kVae) {
    throw ConfigError("feature kind must be '" + std::string(kBaseline) + "' or '" + kVae + "', got '" + kind + "'");
  }
}

inline void stage_train_isolated(const RunConfig& cfg, const RunDir& d, const std::string& kind) {
  check_kind(kind);
  run_stage("train-isolated", [&] {
    const Corpus c = load_corpus(d, kind);
    const Index seq_len = configured_seq_len(cfg);
    const std::uint64_t seed = StageSeeds::derive(cfg.seed).isolated(kind);
    const auto r =
        asr::train_isolated(isolated_examples(c, c.split.train, seq_len), cfg.synth.n_classes, cfg.isolated, seed);
    make_dir(d.models());
    ckpt::save(ckpt::from_isolated(r.model, seed, config::echo(cfg)), d.model("isolated_" + kind));
    std::string csv = "epoch,ce\n";
    for (std::size_t e = 0; e < r.curve.size(); ++e) csv += std::to_string(e + 1) + "," + fmt(r.curve[e]) + "\n";
    write_text(d.curves() / ("isolated_" + kind + "_loss.csv"), csv);
    note_stage(d, cfg, "train-isolated/" + kind, {{"effective_batch", r.effective_batch}, {"epochs", r.curve.size()}});
  });
}

struct EvalRow {
  std::string run_id;
  std::string feature_kind;
  std::string task;
  std::string metric;
  double value = 0.0;
  std::uint64_t seed = 0;
};

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

inline constexpr const char* kReportHeader = "run_id,feature_kind,task,metric,value,seed,config";

inline std::string report_rows(const std::vector<EvalRow>& rows, const std::string& echo) {
  std::string out;
  for (const auto& r : rows) {
    out += r.run_id + "," + r.feature_kind + "," + r.task + "," + r.metric + "," + fmt(r.value) + "," +
           std::to_string(r.seed) + "," + csv_quote(echo) + "\n";
  }
  return out;
}

inline std::vector<EvalRow> parse_report(const std::string& text) {
  std::vector<EvalRow> rows;
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != kReportHeader) throw CorruptFileError("report: bad header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t pos = 0;
    for (int k = 0; k < 6; ++k) {
      const std::size_t comma = line.find(',', pos);
      if (comma == std::string::npos) throw CorruptFileError("report: malformed row: " + line);
      f.push_back(line.substr(pos, comma - pos));
      pos = comma + 1;
    }
    if (pos >= line.size() || line[pos] != '"') throw CorruptFileError("report: row without config echo");
    rows.push_back({f[0], f[1], f[2], f[3], std::stod(f[4]), std::stoull(f[5])});
  }
  return rows;
}

inline void write_eval(const RunDir& d, const RunConfig& cfg, const std::string& name, const std::vector<EvalRow>& rows) {
  write_text(d.reports() / (name + ".csv"), std::string(kReportHeader) + "\n" + report_rows(rows, config::echo(cfg)));
}

inline std::vector<EvalRow> stage_eval_isolated(const RunConfig& cfg, const RunDir& d, const std::string& kind) {
  check_kind(kind);
  return run_stage("eval-isolated", [&] {
    const Corpus c = load_corpus(d, kind);
    const auto m = ckpt::to_isolated(ckpt::load(d.model("isolated_" + kind), ckpt::kind::kIsolated));
    const IsolatedEval e = eval_isolated_on(m, c, configured_seq_len(cfg));
    std::vector<EvalRow> rows{{run_id(cfg), kind, "isolated", "accuracy", e.accuracy, cfg.seed}};
    write_eval(d, cfg, "isolated_" + kind, rows);
    std::string pred = "recording,truth,predicted\n";
    for (std::size_t k = 0; k < c.split.test.size(); ++k) {
      pred += recording_stem(c.split.test[k]) + "," + std::to_string(e.truth[k]) + "," + std::to_string(e.predicted[k]) +
              "\n";
    }
    write_text(d.reports() / ("isolated_" + kind + "_predictions.csv"), pred);
    return rows;
  });
}

inline void stage_train_ctc(const RunConfig& cfg, const RunDir& d, const std::string& kind) {
  check_kind(kind);
  run_stage("train-ctc", [&] {
    const Corpus c = load_corpus(d, kind);
    const std::uint64_t seed = StageSeeds::derive(cfg.seed).ctc(kind);
    const auto train = ctc_examples(c, c.split.train, configured_seq_len(cfg));
    const auto r = asr::train_ctc(train, cfg.ctc.train, seed);
    std::vector<std::string> corpus;
    for (const auto& ex : train) corpus.push_back(ex.transcript);
    const asr::BigramLm lm = asr::train_lm(r.model.vocab, corpus);
    make_dir(d.models());
    ckpt::save(ckpt::from_ctc(r.model, &lm, seed, config::echo(cfg)), d.model("ctc_" + kind));
    std::string csv = "epoch,ctc\n";
    for (std::size_t e = 0; e < r.curve.size(); ++e) csv += std::to_string(e + 1) + "," + fmt(r.curve[e]) + "\n";
    write_text(d.curves() / ("ctc_" + kind + "_loss.csv"), csv);
    note_stage(d, cfg, "train-ctc/" + kind, {{"vocabulary", r.model.vocab.words()}, {"epochs", r.curve.size()}});
  });
}

inline std::string lines(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += s + "\n";
  return out;
}

inline std::vector<EvalRow> stage_eval_ctc(const RunConfig& cfg, const RunDir& d, const std::string& kind) {
  check_kind(kind);
  return run_stage("eval-ctc", [&] {
    const Corpus c = load_corpus(d, kind);
    const auto [m, lm] = ckpt::to_ctc(ckpt::load(d.model("ctc_" + kind), ckpt::kind::kCtc));
    const CtcEval e = eval_ctc_on(m, lm, cfg.ctc.beam, c, configured_seq_len(cfg));
    std::vector<EvalRow> rows{{run_id(cfg), kind, "ctc", "wer_greedy", e.wer_greedy, cfg.seed},
                              {run_id(cfg), kind, "ctc", "wer_beam_lm", e.wer_beam, cfg.seed}};
    write_eval(d, cfg, "ctc_" + kind, rows);
    write_text(d.transcripts() / "references.txt", lines(e.references));
    write_text(d.transcripts() / ("ctc_" + kind + "_greedy.txt"), lines(e.greedy));
    write_text(d.transcripts() / ("ctc_" + kind + "_beam.txt"), lines(e.beam));
    return rows;
  });
}

inline void write_report(const RunConfig& cfg, const RunDir& d, const std::vector<EvalRow>& rows) {
  const std::string echo = config::echo(cfg);
  write_text(d.report_csv(), std::string(kReportHeader) + "\n" + report_rows(rows, echo));
  std::ostringstream s;
  s << "run " << run_id(cfg) << "  seed " << cfg.seed << "\n\n";
  s << "feature kind   task       metric        value\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-14s %-10s %-13s %.6f\n", r.feature_kind.c_str(), r.task.c_str(),
                  r.metric.c_str(), r.value);
    s << buf;
  }
  const fs::path curve = d.curves() / "cvae_loss.csv";
  if (fs::exists(curve)) {
    std::istringstream in(read_text(curve));
    std::string line, first, last;
    std::getline(in, line);
    std::size_t n = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (n++ == 0) first = line;
      last = line;
    }
    s << "\ncvae loss curve: " << n << " epochs\n  first " << first << "\n  last  " << last << "\n";
  }
  s << "\nconfig " << echo << "\n";
  write_text(d.summary(), s.str());
}

// Runs every stage in order and returns the comparison rows.
inline std::vector<EvalRow> run_pipeline(const RunConfig& cfg, const fs::path& out) {
  cfg.validate();
  run_stage("output", [&] { ensure_writable(out); });
  const RunDir d{out};
  stage_synth(cfg, d);
  stage_preprocess(cfg, d);
  stage_kpca(cfg, d);
  stage_train_cvae(cfg, d);
  stage_extract(cfg, d);
  std::vector<EvalRow> rows;
  for (const char* kind : {kBaseline, kVae}) {
    stage_train_isolated(cfg, d, kind);
    const auto r = stage_eval_isolated(cfg, d, kind);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  if (cfg.ctc.enabled) {
    for (const char* kind : {kBaseline, kVae}) {
      stage_train_ctc(cfg, d, kind);
      const auto r = stage_eval_ctc(cfg, d, kind);
      rows.insert(rows.end(), r.begin(), r.end());
    }
  }
  run_stage("report", [&] { write_report(cfg, d, rows); });
  return rows;
}

}  // namespace eegcvae::pipeline
