#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svc/rng.hpp"
#include "svc/tensor.hpp"

namespace svc {

// Synthetic paired token streams with known content and speaker factors.
//
// Content symbols evolve on an order-1 Markov chain at the 40 ms semantic
// rate. Each 20 ms acoustic frame carries per-quantizer digits derived from
// the content stream, shifted into a speaker-specific residue class
// (code = digit + digit_base * speaker_offset, a keyed rotation of the code
// space), so every utterance is exactly invertible by the probes below.
//
// A content symbol splits into a low field (emitted on its own two frames)
// and a high field (emitted one semantic step later). Decoding a symbol
// therefore requires two future acoustic frames, which is what makes the
// encoder's lookahead delay meaningful; the final symbol of every utterance
// is constrained to a zero high field so the stream stays self-contained.
struct CorpusConfig {
  std::uint64_t seed = 1234;
  int num_speakers = 24;
  int train_speakers = 20;
  int num_utterances = 360;
  int min_frames = 12;  // semantic frames per utterance (lower bound)
  int max_frames = 20;
  int semantic_vocab = 32;
  int codec_vocab = 64;
  int num_quantizers = 4;
  int d_sem = 32;
  double noise_sigma = 0.05;

  void validate() const;
};

struct SpeakerProfile {
  int speaker_id = 0;
  std::uint32_t timbre_key = 0;

  // timbre_key is an odd-multiplier scramble of the id: distinct ids always
  // map to distinct keys, and consecutive ids sweep all per-quantizer offsets.
  static SpeakerProfile from_id(int speaker_id, const CorpusConfig& cfg);
};

struct AcousticTokens {
  static constexpr int kFrameMs = 20;
  int frames = 0;      // T
  int quantizers = 0;  // L
  std::vector<std::int32_t> codes;  // T x L row-major

  AcousticTokens() = default;
  AcousticTokens(int t, int l)
      : frames(t), quantizers(l), codes(static_cast<size_t>(t) * l, 0) {}
  std::int32_t& at(int f, int l) { return codes[static_cast<size_t>(f) * quantizers + l]; }
  std::int32_t at(int f, int l) const { return codes[static_cast<size_t>(f) * quantizers + l]; }
};

struct SemanticTokens {
  static constexpr int kFrameMs = 40;
  std::vector<std::int32_t> codes;  // length T' = T/2
};

struct ContinuousSemantic {
  Tensor features;  // T' x d_sem, float32-quantized values
};

struct Utterance {
  std::vector<std::int32_t> content;  // T' symbols in [0, semantic_vocab)
  SpeakerProfile speaker;
  SemanticTokens semantic_tokens;
  ContinuousSemantic continuous_semantic;
  AcousticTokens acoustic_tokens;

  int sem_frames() const { return static_cast<int>(content.size()); }
};

struct ContentProbe {
  std::vector<std::int32_t> symbols;  // per semantic step
  std::vector<double> confidence;     // per semantic step, in [0, 1]
};

struct SpeakerProbe {
  int speaker_id = -1;
  double confidence = 0.0;
};

// The generative family: content chain + mixing function + teacher embedding,
// all derived from CorpusConfig. Pure and thread-safe after construction.
class ToyCodec {
 public:
  explicit ToyCodec(const CorpusConfig& cfg);

  const CorpusConfig& config() const { return cfg_; }
  int lo_bits() const { return lo_bits_; }
  int hi_bits() const { return hi_bits_; }

  // Markov walk of `frames` symbols; final symbol forced into the low field.
  std::vector<std::int32_t> sample_content(int frames, Rng& rng) const;

  // Deterministic mixing of (content stream, speaker) into codec codes.
  AcousticTokens render(const std::vector<std::int32_t>& content,
                        const SpeakerProfile& speaker) const;

  // Teacher features: content embedding rows + Gaussian noise, float32-rounded.
  ContinuousSemantic teacher_features(const std::vector<std::int32_t>& content,
                                      Rng& rng) const;

  // Exact inversion on generated data; nearest-content voting with
  // per-step confidence on arbitrary grids.
  ContentProbe probe_content(const AcousticTokens& a) const;

  // Argmax over the known speaker universe; ties break to the lowest id.
  SpeakerProbe probe_speaker(const AcousticTokens& a) const;

  int speaker_offset(const SpeakerProfile& s, int quantizer) const;

 private:
  int content_digit(int lo, int hiprev_phase, int quantizer) const;

  CorpusConfig cfg_;
  int digit_bits_ = 0;
  int lo_bits_ = 0;
  int hi_bits_ = 0;
  // chain_succ_[s*4..s*4+3]: candidate successors; fixed weights.
  std::vector<std::int32_t> chain_succ_;
  Tensor teacher_table_;  // semantic_vocab x d_sem
};

std::vector<Utterance> generate_corpus(const CorpusConfig& cfg);

// Convenience overload mirroring the corpus generator's primary knobs.
std::vector<Utterance> generate_corpus(std::uint64_t seed, int num_speakers,
                                       int num_utterances, int min_frames,
                                       int max_frames);

// Re-renders an utterance's acoustic side for a different speaker; semantic
// side is shared by construction.
Utterance with_speaker(const ToyCodec& codec, const Utterance& u,
                       const SpeakerProfile& speaker);

// Utterances reserved for held-out measurement (never used as training items).
bool is_heldout_utterance(const CorpusConfig& cfg, int utterance_index);

// Container round-trip: JSON manifest + flat little-endian payload.
void save_corpus(const std::string& manifest_path, const std::string& payload_path,
                 const CorpusConfig& cfg, const std::vector<Utterance>& utts);
std::vector<Utterance> load_corpus(const std::string& manifest_path,
                                   const std::string& payload_path,
                                   CorpusConfig* cfg_out = nullptr);

}  // namespace svc
