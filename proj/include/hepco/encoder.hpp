#pragma once

// Frozen feature sources. Both produce EncodedSample records whose tokens
// never change after construction; the visual query is the token row-mean.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hepco/nn.hpp"
#include "hepco/seeding.hpp"

namespace hepco::encoder {

using nn::Mat;
using nn::Vec;

struct EncodedSample {
  Mat tokens;  // T×D
  Vec query;   // D
  std::uint32_t label = 0;
};

inline Vec row_mean(const Mat& tokens) {
  Vec q(tokens.cols, 0.0);
  for (std::size_t r = 0; r < tokens.rows; ++r) nn::axpy(1.0, tokens.row(r), q);
  if (tokens.rows > 0)
    for (double& x : q) x /= static_cast<double>(tokens.rows);
  return q;
}

inline EncodedSample make_sample(Mat tokens, std::uint32_t label) {
  EncodedSample s;
  s.query = row_mean(tokens);
  s.tokens = std::move(tokens);
  s.label = label;
  return s;
}

struct Dataset {
  std::size_t n_classes = 0;
  std::size_t tokens = 0;  // T
  std::size_t dim = 0;     // D
  std::vector<EncodedSample> samples;
};

struct SyntheticSpec {
  std::size_t n_classes = 20;
  std::size_t samples_per_class = 100;
  std::size_t dim = 32;
  std::size_t tokens = 4;
  double center_scale = 1.0;
  double noise_scale = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_classes == 0) throw std::invalid_argument("synthetic.n_classes must be >= 1");
    if (samples_per_class == 0) throw std::invalid_argument("synthetic.samples_per_class must be >= 1");
    if (dim < 2) throw std::invalid_argument("synthetic.dim must be >= 2");
    if (tokens < 1) throw std::invalid_argument("synthetic.tokens must be >= 1");
    if (!(center_scale > 0.0)) throw std::invalid_argument("synthetic.center_scale must be > 0");
    if (noise_scale < 0.0) throw std::invalid_argument("synthetic.noise_scale must be >= 0");
  }
};

/// Gaussian clusters: class c has a random center μ_c, every token of a
/// sample is μ_c plus independent noise. Samples are ordered class-major.
inline Dataset synth_generate(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  ds.n_classes = spec.n_classes;
  ds.tokens = spec.tokens;
  ds.dim = spec.dim;
  const SeedStreams streams(spec.seed);

  std::vector<Vec> centers(spec.n_classes, Vec(spec.dim));
  Rng center_rng = streams.rng("centers");
  for (auto& c : centers) nn::fill_normal(std::span<double>(c), center_rng, spec.center_scale);

  Rng noise_rng = streams.rng("noise");
  std::normal_distribution<double> noise(0.0, 1.0);
  ds.samples.reserve(spec.n_classes * spec.samples_per_class);
  for (std::size_t c = 0; c < spec.n_classes; ++c) {
    for (std::size_t n = 0; n < spec.samples_per_class; ++n) {
      Mat tok(spec.tokens, spec.dim);
      for (std::size_t t = 0; t < spec.tokens; ++t)
        for (std::size_t d = 0; d < spec.dim; ++d)
          tok(t, d) = centers[c][d] + spec.noise_scale * noise(noise_rng);
      ds.samples.push_back(make_sample(std::move(tok), static_cast<std::uint32_t>(c)));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Embedding file: "HEPC", u32 version=1, u32 n_samples, u32 T, u32 D,
// u32 n_classes, then per record u32 label and T×D float32 tokens. All
// little-endian.

inline constexpr std::array<char, 4> kEmbeddingMagic{'H', 'E', 'P', 'C'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;

enum class EmbeddingError { io = 1, bad_magic, bad_version, bad_header, truncated, label_out_of_range };

inline const char* to_string(EmbeddingError e) {
  switch (e) {
    case EmbeddingError::io: return "io";
    case EmbeddingError::bad_magic: return "bad_magic";
    case EmbeddingError::bad_version: return "bad_version";
    case EmbeddingError::bad_header: return "bad_header";
    case EmbeddingError::truncated: return "truncated";
    case EmbeddingError::label_out_of_range: return "label_out_of_range";
  }
  return "unknown";
}

class EmbeddingFormatError : public std::runtime_error {
 public:
  EmbeddingFormatError(EmbeddingError code, const std::string& msg)
      : std::runtime_error(std::string("embedding file ") + to_string(code) + ": " + msg), code_(code) {}
  EmbeddingError code() const { return code_; }

 private:
  EmbeddingError code_;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline bool get_u32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
      (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline void put_f32(std::ostream& os, float f) { put_u32(os, std::bit_cast<std::uint32_t>(f)); }

inline bool get_f32(std::istream& is, float& f) {
  std::uint32_t u;
  if (!get_u32(is, u)) return false;
  f = std::bit_cast<float>(u);
  return true;
}

}  // namespace detail

/// Tokens are narrowed to float32; the reloaded query is recomputed from the
/// narrowed tokens.
inline void write_embeddings(std::ostream& os, const Dataset& ds) {
  os.write(kEmbeddingMagic.data(), 4);
  detail::put_u32(os, kEmbeddingVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(ds.samples.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(ds.tokens));
  detail::put_u32(os, static_cast<std::uint32_t>(ds.dim));
  detail::put_u32(os, static_cast<std::uint32_t>(ds.n_classes));
  for (const auto& s : ds.samples) {
    detail::put_u32(os, s.label);
    for (double x : s.tokens.data) detail::put_f32(os, static_cast<float>(x));
  }
}

inline Dataset read_embeddings(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4)) throw EmbeddingFormatError(EmbeddingError::truncated, "missing magic");
  if (magic != kEmbeddingMagic) throw EmbeddingFormatError(EmbeddingError::bad_magic, "expected HEPC");
  std::uint32_t version = 0, n = 0, t = 0, d = 0, k = 0;
  if (!detail::get_u32(is, version)) throw EmbeddingFormatError(EmbeddingError::truncated, "missing version");
  if (version != kEmbeddingVersion)
    throw EmbeddingFormatError(EmbeddingError::bad_version, "unsupported version " + std::to_string(version));
  if (!detail::get_u32(is, n) || !detail::get_u32(is, t) || !detail::get_u32(is, d) || !detail::get_u32(is, k))
    throw EmbeddingFormatError(EmbeddingError::truncated, "incomplete header");
  if (t == 0 || d == 0 || k == 0)
    throw EmbeddingFormatError(EmbeddingError::bad_header, "T, D and n_classes must be nonzero");

  Dataset ds;
  ds.n_classes = k;
  ds.tokens = t;
  ds.dim = d;
  ds.samples.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    std::uint32_t label = 0;
    if (!detail::get_u32(is, label))
      throw EmbeddingFormatError(EmbeddingError::truncated, "record " + std::to_string(i) + " missing");
    if (label >= k)
      throw EmbeddingFormatError(EmbeddingError::label_out_of_range,
                                 "record " + std::to_string(i) + " has label " + std::to_string(label));
    Mat tok(t, d);
    for (double& x : tok.data) {
      float f = 0.0f;
      if (!detail::get_f32(is, f))
        throw EmbeddingFormatError(EmbeddingError::truncated, "record " + std::to_string(i) + " cut short");
      x = f;
    }
    ds.samples.push_back(make_sample(std::move(tok), label));
  }
  return ds;
}

inline Dataset load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw EmbeddingFormatError(EmbeddingError::io, "cannot open " + path);
  return read_embeddings(in);
}

}  // namespace hepco::encoder
