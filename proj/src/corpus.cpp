#include "svc/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace svc {

namespace {

int ilog2(int v) {
  int b = 0;
  while ((1 << b) < v) ++b;
  return b;
}

bool is_pow2(int v) { return v > 0 && (v & (v - 1)) == 0; }

constexpr double kChainWeights[4] = {0.55, 0.2, 0.15, 0.1};

}  // namespace

void CorpusConfig::validate() const {
  if (num_speakers < 2) throw std::invalid_argument("corpus: num_speakers must be >= 2");
  if (train_speakers < 1 || train_speakers >= num_speakers)
    throw std::invalid_argument("corpus: train_speakers must leave at least one held-out speaker");
  if (min_frames < 4 || max_frames < min_frames)
    throw std::invalid_argument("corpus: require max_frames >= min_frames >= 4");
  if (num_utterances < 1) throw std::invalid_argument("corpus: num_utterances must be >= 1");
  if (!is_pow2(semantic_vocab) || !is_pow2(codec_vocab))
    throw std::invalid_argument("corpus: vocab sizes must be powers of two");
  if (num_quantizers < 2) throw std::invalid_argument("corpus: need at least 2 quantizers");
  const int digit_bits = ilog2(codec_vocab) / 2;
  const int content_bits = ilog2(semantic_vocab);
  const int hi_bits = std::max(0, content_bits - digit_bits);
  if (hi_bits + 1 > digit_bits)
    throw std::invalid_argument("corpus: semantic_vocab too large for codec_vocab field layout");
  if (d_sem < 1) throw std::invalid_argument("corpus: d_sem must be >= 1");
}

SpeakerProfile SpeakerProfile::from_id(int speaker_id, const CorpusConfig& cfg) {
  if (speaker_id < 0) throw std::invalid_argument("speaker_id must be >= 0");
  const int digit_bits = ilog2(cfg.codec_vocab) / 2;
  const int offset_bits = ilog2(cfg.codec_vocab) - digit_bits;
  const int key_bits = offset_bits * cfg.num_quantizers;
  const std::uint64_t mask = key_bits >= 64 ? ~0ull : ((1ull << key_bits) - 1);
  SpeakerProfile p;
  p.speaker_id = speaker_id;
  p.timbre_key = static_cast<std::uint32_t>(
      (static_cast<std::uint64_t>(speaker_id) * 2285u + 1641u) & mask);
  return p;
}

ToyCodec::ToyCodec(const CorpusConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  digit_bits_ = ilog2(cfg_.codec_vocab) / 2;
  const int content_bits = ilog2(cfg_.semantic_vocab);
  hi_bits_ = std::max(0, content_bits - digit_bits_);
  lo_bits_ = content_bits - hi_bits_;

  // Successor table for the content chain, shared across speakers.
  Rng chain_rng(splitmix64(cfg_.seed) ^ fnv1a("content-chain"));
  chain_succ_.resize(static_cast<size_t>(cfg_.semantic_vocab) * 4);
  for (int s = 0; s < cfg_.semantic_vocab; ++s)
    for (int j = 0; j < 4; ++j)
      chain_succ_[s * 4 + j] = chain_rng.uniform_int(0, cfg_.semantic_vocab - 1);

  Rng table_rng(splitmix64(cfg_.seed) ^ fnv1a("teacher-table"));
  teacher_table_ = Tensor(cfg_.semantic_vocab, cfg_.d_sem);
  const Real scale = 1.0 / std::sqrt(static_cast<Real>(cfg_.d_sem));
  for (auto& x : teacher_table_.v)
    x = static_cast<Real>(static_cast<float>(scale * table_rng.normal()));
}

std::vector<std::int32_t> ToyCodec::sample_content(int frames, Rng& rng) const {
  std::vector<std::int32_t> content(frames);
  content[0] = rng.uniform_int(0, cfg_.semantic_vocab - 1);
  for (int t = 1; t < frames; ++t) {
    const int pick = rng.categorical(kChainWeights, 4);
    content[t] = chain_succ_[content[t - 1] * 4 + pick];
  }
  // Final symbol carries no high field; its high bits would otherwise have
  // no frame to live on.
  content[frames - 1] &= (1 << lo_bits_) - 1;
  return content;
}

int ToyCodec::content_digit(int lo, int hiprev_phase, int quantizer) const {
  const int base_mask = (1 << digit_bits_) - 1;
  switch (quantizer) {
    case 0:
      return lo & base_mask;
    case 1:
      return hiprev_phase & base_mask;
    default:
      return ((2 * quantizer + 1) * lo + (quantizer - 1) * hiprev_phase + quantizer) &
             base_mask;
  }
}

int ToyCodec::speaker_offset(const SpeakerProfile& s, int quantizer) const {
  const int offset_bits = ilog2(cfg_.codec_vocab) - digit_bits_;
  return static_cast<int>((s.timbre_key >> (offset_bits * quantizer)) &
                          ((1u << offset_bits) - 1));
}

AcousticTokens ToyCodec::render(const std::vector<std::int32_t>& content,
                                const SpeakerProfile& speaker) const {
  const int sem_frames = static_cast<int>(content.size());
  AcousticTokens a(2 * sem_frames, cfg_.num_quantizers);
  const int lo_mask = (1 << lo_bits_) - 1;
  for (int f = 0; f < a.frames; ++f) {
    const int t = f / 2;
    const int phase = f & 1;
    const int lo = content[t] & lo_mask;
    const int hiprev = t == 0 ? 0 : (content[t - 1] >> lo_bits_);
    const int hp = hiprev | (phase << hi_bits_);
    for (int l = 0; l < cfg_.num_quantizers; ++l)
      a.at(f, l) = static_cast<std::int32_t>(content_digit(lo, hp, l) +
                                             (speaker_offset(speaker, l) << digit_bits_));
  }
  return a;
}

ContinuousSemantic ToyCodec::teacher_features(
    const std::vector<std::int32_t>& content, Rng& rng) const {
  ContinuousSemantic c;
  c.features = Tensor(static_cast<int>(content.size()), cfg_.d_sem);
  for (int t = 0; t < c.features.rows; ++t) {
    const Real* row = teacher_table_.row(content[t]);
    Real* out = c.features.row(t);
    for (int j = 0; j < cfg_.d_sem; ++j)
      out[j] = static_cast<Real>(
          static_cast<float>(row[j] + cfg_.noise_sigma * rng.normal()));
  }
  return c;
}

ContentProbe ToyCodec::probe_content(const AcousticTokens& a) const {
  if (a.quantizers != cfg_.num_quantizers)
    throw std::invalid_argument("probe_content: quantizer count mismatch");
  if (a.frames % 2 != 0)
    throw std::invalid_argument("probe_content: odd frame count");
  const int sem_frames = a.frames / 2;
  const int digit_mask = (1 << digit_bits_) - 1;
  const int hi_mask = (1 << hi_bits_) - 1;

  // Per-frame decoded fields and consistency score.
  std::vector<int> frame_lo(a.frames), frame_hp(a.frames);
  std::vector<double> frame_conf(a.frames);
  for (int f = 0; f < a.frames; ++f) {
    const int lo = a.at(f, 0) & digit_mask;
    const int hp = a.at(f, 1) & digit_mask;
    int checks = 1;  // phase bit
    int ok = ((hp >> hi_bits_) == (f & 1)) ? 1 : 0;
    for (int l = 2; l < cfg_.num_quantizers; ++l) {
      ++checks;
      if ((a.at(f, l) & digit_mask) == content_digit(lo, hp, l)) ++ok;
    }
    frame_lo[f] = lo;
    frame_hp[f] = hp;
    frame_conf[f] = static_cast<double>(ok) / checks;
  }

  ContentProbe probe;
  probe.symbols.resize(sem_frames);
  probe.confidence.resize(sem_frames);
  for (int t = 0; t < sem_frames; ++t) {
    // Low field: weighted vote between this step's two frames.
    int lo = frame_lo[2 * t];
    if (frame_lo[2 * t] != frame_lo[2 * t + 1] &&
        frame_conf[2 * t + 1] > frame_conf[2 * t])
      lo = frame_lo[2 * t + 1];
    // High field: carried on the next step's frames; final step has none.
    int hi = 0;
    double hi_conf = 1.0;
    if (hi_bits_ > 0 && t + 1 < sem_frames) {
      const int f0 = 2 * (t + 1), f1 = f0 + 1;
      hi = frame_hp[f0] & hi_mask;
      if ((frame_hp[f1] & hi_mask) != hi && frame_conf[f1] > frame_conf[f0])
        hi = frame_hp[f1] & hi_mask;
      hi_conf = 0.5 * (frame_conf[f0] + frame_conf[f1]);
    }
    probe.symbols[t] = static_cast<std::int32_t>((hi << lo_bits_) | lo);
    probe.confidence[t] =
        0.5 * (0.5 * (frame_conf[2 * t] + frame_conf[2 * t + 1]) + hi_conf);
  }
  return probe;
}

SpeakerProbe ToyCodec::probe_speaker(const AcousticTokens& a) const {
  if (a.quantizers != cfg_.num_quantizers)
    throw std::invalid_argument("probe_speaker: quantizer count mismatch");
  SpeakerProbe best;
  long best_score = -1;
  for (int id = 0; id < cfg_.num_speakers; ++id) {
    const SpeakerProfile p = SpeakerProfile::from_id(id, cfg_);
    long score = 0;
    for (int f = 0; f < a.frames; ++f)
      for (int l = 0; l < cfg_.num_quantizers; ++l)
        if ((a.at(f, l) >> digit_bits_) == speaker_offset(p, l)) ++score;
    if (score > best_score) {  // ties keep the lowest id
      best_score = score;
      best.speaker_id = id;
    }
  }
  const long total = static_cast<long>(a.frames) * cfg_.num_quantizers;
  best.confidence = total > 0 ? static_cast<double>(best_score) / total : 0.0;
  return best;
}

std::vector<Utterance> generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  const ToyCodec codec(cfg);
  std::vector<Utterance> utts(cfg.num_utterances);
  for (int i = 0; i < cfg.num_utterances; ++i) {
    Rng rng(splitmix64(cfg.seed) ^ splitmix64(0x5eed0000ull + i));
    Utterance& u = utts[i];
    const int frames = rng.uniform_int(cfg.min_frames, cfg.max_frames);
    u.content = codec.sample_content(frames, rng);
    u.speaker = SpeakerProfile::from_id(i % cfg.num_speakers, cfg);
    u.semantic_tokens.codes = u.content;
    u.continuous_semantic = codec.teacher_features(u.content, rng);
    u.acoustic_tokens = codec.render(u.content, u.speaker);
  }
  return utts;
}

std::vector<Utterance> generate_corpus(std::uint64_t seed, int num_speakers,
                                       int num_utterances, int min_frames,
                                       int max_frames) {
  CorpusConfig cfg;
  cfg.seed = seed;
  cfg.num_speakers = num_speakers;
  cfg.train_speakers = num_speakers - 1;
  cfg.num_utterances = num_utterances;
  cfg.min_frames = min_frames;
  cfg.max_frames = max_frames;
  return generate_corpus(cfg);
}

Utterance with_speaker(const ToyCodec& codec, const Utterance& u,
                       const SpeakerProfile& speaker) {
  Utterance out = u;
  out.speaker = speaker;
  out.acoustic_tokens = codec.render(u.content, speaker);
  return out;
}

bool is_heldout_utterance(const CorpusConfig& cfg, int utterance_index) {
  return ((utterance_index / cfg.num_speakers) % 8) == 7;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

void append_i32(std::string& buf, const std::int32_t* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const std::uint32_t v = static_cast<std::uint32_t>(p[i]);
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
  }
}

void append_f32(std::string& buf, const Real* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    const float f = static_cast<float>(p[i]);
    std::uint32_t v;
    std::memcpy(&v, &f, 4);
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
  }
}

std::uint32_t read_u32(const std::string& buf, size_t off) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off])) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 1])) << 8) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 2])) << 16) |
         (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 3])) << 24);
}

nlohmann::json config_to_json(const CorpusConfig& cfg) {
  return nlohmann::json{{"seed", cfg.seed},
                        {"num_speakers", cfg.num_speakers},
                        {"train_speakers", cfg.train_speakers},
                        {"num_utterances", cfg.num_utterances},
                        {"min_frames", cfg.min_frames},
                        {"max_frames", cfg.max_frames},
                        {"semantic_vocab", cfg.semantic_vocab},
                        {"codec_vocab", cfg.codec_vocab},
                        {"num_quantizers", cfg.num_quantizers},
                        {"d_sem", cfg.d_sem},
                        {"noise_sigma", cfg.noise_sigma}};
}

CorpusConfig config_from_json(const nlohmann::json& j) {
  CorpusConfig cfg;
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.num_speakers = j.at("num_speakers").get<int>();
  cfg.train_speakers = j.at("train_speakers").get<int>();
  cfg.num_utterances = j.at("num_utterances").get<int>();
  cfg.min_frames = j.at("min_frames").get<int>();
  cfg.max_frames = j.at("max_frames").get<int>();
  cfg.semantic_vocab = j.at("semantic_vocab").get<int>();
  cfg.codec_vocab = j.at("codec_vocab").get<int>();
  cfg.num_quantizers = j.at("num_quantizers").get<int>();
  cfg.d_sem = j.at("d_sem").get<int>();
  cfg.noise_sigma = j.at("noise_sigma").get<double>();
  return cfg;
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::string data((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return data;
}

}  // namespace

void save_corpus(const std::string& manifest_path, const std::string& payload_path,
                 const CorpusConfig& cfg, const std::vector<Utterance>& utts) {
  std::string payload;
  nlohmann::json records = nlohmann::json::array();
  for (const auto& u : utts) {
    const int tp = u.sem_frames();
    nlohmann::json rec;
    rec["speaker"] = u.speaker.speaker_id;
    rec["frames"] = tp;
    rec["content_off"] = payload.size();
    append_i32(payload, u.content.data(), u.content.size());
    rec["semantic_off"] = payload.size();
    append_i32(payload, u.semantic_tokens.codes.data(), u.semantic_tokens.codes.size());
    rec["acoustic_off"] = payload.size();
    append_i32(payload, u.acoustic_tokens.codes.data(), u.acoustic_tokens.codes.size());
    rec["continuous_off"] = payload.size();
    append_f32(payload, u.continuous_semantic.features.v.data(),
               u.continuous_semantic.features.size());
    records.push_back(rec);
  }
  nlohmann::json manifest;
  manifest["format"] = "svc-corpus-v1";
  manifest["config"] = config_to_json(cfg);
  manifest["utterances"] = records;
  manifest["payload_bytes"] = payload.size();
  manifest["payload_hash"] = hex64(fnv1a(payload.data(), payload.size()));
  write_file(manifest_path, manifest.dump(2) + "\n");
  write_file(payload_path, payload);
}

std::vector<Utterance> load_corpus(const std::string& manifest_path,
                                   const std::string& payload_path,
                                   CorpusConfig* cfg_out) {
  nlohmann::json manifest = nlohmann::json::parse(read_file(manifest_path));
  if (manifest.at("format").get<std::string>() != "svc-corpus-v1")
    throw VersionError("corpus manifest: unknown format");
  const std::string payload = read_file(payload_path);
  if (manifest.at("payload_bytes").get<size_t>() != payload.size())
    throw VersionError("corpus payload size does not match manifest");
  if (manifest.at("payload_hash").get<std::string>() !=
      hex64(fnv1a(payload.data(), payload.size())))
    throw VersionError("corpus payload hash does not match manifest");
  const CorpusConfig cfg = config_from_json(manifest.at("config"));
  cfg.validate();
  if (cfg_out) *cfg_out = cfg;

  std::vector<Utterance> utts;
  for (const auto& rec : manifest.at("utterances")) {
    Utterance u;
    const int tp = rec.at("frames").get<int>();
    u.speaker = SpeakerProfile::from_id(rec.at("speaker").get<int>(), cfg);
    size_t off = rec.at("content_off").get<size_t>();
    u.content.resize(tp);
    for (int i = 0; i < tp; ++i)
      u.content[i] = static_cast<std::int32_t>(read_u32(payload, off + 4 * i));
    off = rec.at("semantic_off").get<size_t>();
    u.semantic_tokens.codes.resize(tp);
    for (int i = 0; i < tp; ++i)
      u.semantic_tokens.codes[i] = static_cast<std::int32_t>(read_u32(payload, off + 4 * i));
    off = rec.at("acoustic_off").get<size_t>();
    u.acoustic_tokens = AcousticTokens(2 * tp, cfg.num_quantizers);
    for (size_t i = 0; i < u.acoustic_tokens.codes.size(); ++i)
      u.acoustic_tokens.codes[i] = static_cast<std::int32_t>(read_u32(payload, off + 4 * i));
    off = rec.at("continuous_off").get<size_t>();
    u.continuous_semantic.features = Tensor(tp, cfg.d_sem);
    for (size_t i = 0; i < u.continuous_semantic.features.size(); ++i) {
      const std::uint32_t bits = read_u32(payload, off + 4 * i);
      float f;
      std::memcpy(&f, &bits, 4);
      u.continuous_semantic.features.v[i] = static_cast<Real>(f);
    }
    utts.push_back(std::move(u));
  }
  return utts;
}

}  // namespace svc
