#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "eegcvae/asr.hpp"
#include "eegcvae/binary_io.hpp"
#include "eegcvae/cvae.hpp"
#include "eegcvae/kpca.hpp"
#include "eegcvae/tensor.hpp"

// Versioned model container.
//
//   "CKPT"  u32 version  str kind  u64 seed  str config_echo
//   u32 n_attributes  { str key, str value }*
//   u32 n_blocks      { str name, u64 rows, u64 cols, rows·cols f64 row-major }*
//
// Strings are u32-length-prefixed bytes, numbers little-endian. A file must be
// consumed exactly; anything short or long is reported as corrupt and nothing
// is returned.

namespace eegcvae::ckpt {

using Eigen::Index;

inline constexpr std::uint32_t kVersion = 1;

namespace kind {
inline constexpr const char* kCvae = "cvae";
inline constexpr const char* kIsolated = "isolated";
inline constexpr const char* kCtc = "ctc";
inline constexpr const char* kKpca = "kpca";
}  // namespace kind

struct Checkpoint {
  std::string kind;
  std::uint64_t seed = 0;
  std::string config_echo;
  std::map<std::string, std::string> attributes;
  std::vector<std::pair<std::string, Tensor2>> blocks;

  const Tensor2& block(const std::string& name) const {
    for (const auto& [n, t] : blocks) {
      if (n == name) return t;
    }
    throw CorruptFileError("checkpoint has no block named " + name);
  }
  bool has_block(const std::string& name) const {
    for (const auto& b : blocks) {
      if (b.first == name) return true;
    }
    return false;
  }
  void add(std::string name, Tensor2 t) { blocks.emplace_back(std::move(name), std::move(t)); }
};

inline std::vector<char> serialize(const Checkpoint& c) {
  io::Writer w;
  w.bytes("CKPT");
  w.u32(kVersion);
  w.str(c.kind);
  w.u64(c.seed);
  w.str(c.config_echo);
  w.u32(static_cast<std::uint32_t>(c.attributes.size()));
  for (const auto& [k, v] : c.attributes) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(c.blocks.size()));
  for (const auto& [name, t] : c.blocks) {
    w.str(name);
    w.u64(static_cast<std::uint64_t>(t.rows()));
    w.u64(static_cast<std::uint64_t>(t.cols()));
    for (Index i = 0; i < t.size(); ++i) w.f64(t.data()[i]);
  }
  return w.buffer();
}

inline Checkpoint deserialize(io::Reader rd) {
  try {
    rd.expect_magic("CKPT");
    const std::uint32_t version = rd.u32();
    if (version != kVersion) {
      throw VersionError(rd.origin() + ": checkpoint format version " + std::to_string(version) +
                         " has no migration to version " + std::to_string(kVersion));
    }
    Checkpoint c;
    c.kind = rd.str();
    c.seed = rd.u64();
    c.config_echo = rd.str();
    const std::uint32_t n_attr = rd.u32();
    for (std::uint32_t i = 0; i < n_attr; ++i) {
      std::string k = rd.str();
      c.attributes[k] = rd.str();
    }
    const std::uint32_t n_blocks = rd.u32();
    for (std::uint32_t i = 0; i < n_blocks; ++i) {
      std::string name = rd.str();
      const std::uint64_t rows = rd.u64();
      const std::uint64_t cols = rd.u64();
      if (cols != 0 && rows > rd.remaining() / 8 / cols) throw CorruptFileError(rd.origin() + ": truncated block " + name);
      Tensor2 t(static_cast<Index>(rows), static_cast<Index>(cols));
      for (Index k = 0; k < t.size(); ++k) t.data()[k] = rd.f64();
      c.blocks.emplace_back(std::move(name), std::move(t));
    }
    if (!rd.at_end()) throw CorruptFileError(rd.origin() + ": trailing bytes after checkpoint");
    return c;
  } catch (const CorruptFileError& e) {
    throw CorruptFileError(std::string("corrupt checkpoint: ") + e.what());
  }
}

inline void save(const Checkpoint& c, const std::filesystem::path& path) {
  io::Writer w;
  const std::vector<char> bytes = serialize(c);
  w.bytes(std::string_view(bytes.data(), bytes.size()));
  w.save(path);
}

inline Checkpoint load(const std::filesystem::path& path, const std::string& expected_kind = "") {
  Checkpoint c = deserialize(io::Reader::open(path));
  if (!expected_kind.empty() && c.kind != expected_kind) {
    throw KindError(path.string() + ": checkpoint holds a '" + c.kind + "' model, expected '" + expected_kind + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Model adapters.

template <typename Model>
void put_params(Checkpoint& c, const Model& m) {
  m.for_each_param([&](const std::string& name, const Tensor2& t) { c.add(name, t); });
}

template <typename Model>
void take_params(const Checkpoint& c, Model& m) {
  m.for_each_param([&](const std::string& name, Tensor2& t) { t = c.block(name); });
}

inline Checkpoint from_cvae(const cvae::CvaeParams& p, std::uint64_t seed, std::string config_echo) {
  Checkpoint c{kind::kCvae, seed, std::move(config_echo), {}, {}};
  put_params(c, p);
  return c;
}

inline cvae::CvaeParams to_cvae(const Checkpoint& c) {
  if (c.kind != kind::kCvae) throw KindError("checkpoint holds a '" + c.kind + "' model, expected 'cvae'");
  cvae::CvaeParams p;
  take_params(c, p);
  return p;
}

inline Checkpoint from_isolated(const asr::IsolatedModel& m, std::uint64_t seed, std::string config_echo) {
  Checkpoint c{kind::kIsolated, seed, std::move(config_echo), {}, {}};
  Tensor2 structure(static_cast<Index>(m.tcn.levels.size()), 3);
  for (std::size_t l = 0; l < m.tcn.levels.size(); ++l) {
    const auto& lv = m.tcn.levels[l];
    structure.row(static_cast<Index>(l)) << static_cast<double>(lv.kernel), static_cast<double>(lv.dilation),
        lv.residual ? 1.0 : 0.0;
  }
  c.add("tcn.structure", structure);
  put_params(c, m);
  return c;
}

inline asr::IsolatedModel to_isolated(const Checkpoint& c) {
  if (c.kind != kind::kIsolated) throw KindError("checkpoint holds a '" + c.kind + "' model, expected 'isolated'");
  asr::IsolatedModel m;
  const Tensor2& structure = c.block("tcn.structure");
  for (Index l = 0; l < structure.rows(); ++l) {
    nn::TcnLevel lv;
    lv.kernel = static_cast<Index>(structure(l, 0));
    lv.dilation = static_cast<Index>(structure(l, 1));
    lv.residual = structure(l, 2) != 0.0;
    const std::string proj = "tcn.level" + std::to_string(l) + ".proj";
    if (c.has_block(proj)) lv.proj = c.block(proj);
    m.tcn.levels.push_back(std::move(lv));
  }
  take_params(c, m);
  return m;
}

inline Checkpoint from_ctc(const asr::CtcModel& m, const asr::BigramLm* lm, std::uint64_t seed,
                           std::string config_echo) {
  Checkpoint c{kind::kCtc, seed, std::move(config_echo), {}, {}};
  c.attributes["vocabulary"] = asr::join_words(m.vocab.words());
  put_params(c, m);
  if (lm) {
    const auto& counts = lm->bigram_counts();
    Tensor2 table(static_cast<Index>(counts.size()), 3);
    Index r = 0;
    for (const auto& [key, n] : counts) {
      table.row(r++) << static_cast<double>(key.first), static_cast<double>(key.second), static_cast<double>(n);
    }
    c.add("lm.bigrams", table);
  }
  return c;
}

inline std::pair<asr::CtcModel, asr::BigramLm> to_ctc(const Checkpoint& c) {
  if (c.kind != kind::kCtc) throw KindError("checkpoint holds a '" + c.kind + "' model, expected 'ctc'");
  asr::CtcModel m;
  const auto it = c.attributes.find("vocabulary");
  if (it == c.attributes.end()) throw CorruptFileError("ctc checkpoint without vocabulary");
  m.vocab = asr::Vocabulary(asr::split_words(it->second));
  take_params(c, m);
  asr::BigramLm lm;
  if (c.has_block("lm.bigrams")) {
    std::map<std::pair<int, int>, std::int64_t> counts;
    const Tensor2& t = c.block("lm.bigrams");
    for (Index r = 0; r < t.rows(); ++r) {
      counts[{static_cast<int>(t(r, 0)), static_cast<int>(t(r, 1))}] = static_cast<std::int64_t>(t(r, 2));
    }
    lm.set_counts(m.vocab.size(), std::move(counts));
  }
  return {std::move(m), std::move(lm)};
}

}  // namespace eegcvae::ckpt
