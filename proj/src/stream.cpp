#include "svc/stream.hpp"

#include <chrono>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "svc/connector.hpp"
#include "svc/encoder.hpp"
#include "svc/trainer.hpp"
#include "transformer_util.hpp"

namespace svc {

LatencyReport latency_report(double delay_ms, double token_ms, double rtf_model,
                             double rtf_codec) {
  if (delay_ms < 0 || token_ms < 0 || rtf_model < 0 || rtf_codec < 0)
    throw std::invalid_argument("latency_report: negative input");
  LatencyReport r;
  r.delay_ms = delay_ms;
  r.token_ms = token_ms;
  r.rtf_model = rtf_model;
  r.rtf_codec = rtf_codec;
  r.total_ms = delay_ms + token_ms + token_ms * (rtf_model + rtf_codec);
  return r;
}

namespace {

class Stopwatch {
 public:
  explicit Stopwatch(double& acc) : acc_(acc), t0_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    acc_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
  }

 private:
  double& acc_;
  std::chrono::steady_clock::time_point t0_;
};

// One transformer layer applied to a single row against a growing KV cache.
// Mirrors the training graph op for op so streaming output is bit-identical
// to batched decoding.
void layer_step(const ParamStore& ps, const std::string& prefix, int heads,
                const LoraSpec* lora, std::vector<Real>& kbuf, std::vector<Real>& vbuf,
                int& cache_rows, Tensor& x) {
  const int d = x.cols;
  const int dh = d / heads;

  Tensor normed(1, d);
  rmsnorm_row(x.row(0), ps.data(prefix + ".attn_norm.gain"), normed.row(0), d);

  auto linear = [&](const std::string& base) {
    const ParamView& v = ps.view(base);
    Tensor w(v.rows, v.cols);
    std::memcpy(w.v.data(), ps.data(v), v.size() * sizeof(Real));
    Tensor y = matmul(normed, w);
    if (lora && lora->rank > 0 && ps.has(base + "." + lora->suffix + "_a")) {
      Tensor a = ps.tensor(base + "." + lora->suffix + "_a");
      Tensor b = ps.tensor(base + "." + lora->suffix + "_b");
      Tensor delta = matmul(matmul(normed, a), b);
      const Real s = lora->alpha / lora->rank;
      for (int c = 0; c < d; ++c) y.v[c] += s * delta.v[c];
    }
    return y;
  };

  Tensor q = linear(prefix + ".attn.wq");
  Tensor k = linear(prefix + ".attn.wk");
  Tensor v = linear(prefix + ".attn.wv");
  kbuf.insert(kbuf.end(), k.v.begin(), k.v.end());
  vbuf.insert(vbuf.end(), v.v.begin(), v.v.end());
  ++cache_rows;

  const Real inv_sqrt = 1.0 / std::sqrt(static_cast<Real>(dh));
  Tensor ctx(1, d);
  for (int h = 0; h < heads; ++h) {
    std::vector<Real> scores(cache_rows);
    for (int j = 0; j < cache_rows; ++j)
      scores[j] = dot(q.row(0) + h * dh, kbuf.data() + static_cast<size_t>(j) * d + h * dh,
                      dh) *
                  inv_sqrt;
    softmax_inplace(scores.data(), cache_rows);
    for (int j = 0; j < cache_rows; ++j) {
      const Real* vrow = vbuf.data() + static_cast<size_t>(j) * d + h * dh;
      for (int c = 0; c < dh; ++c) ctx.v[h * dh + c] += scores[j] * vrow[c];
    }
  }
  Tensor attn_out = matmul(ctx, ps.tensor(prefix + ".attn.wo"));
  for (int c = 0; c < d; ++c) x.v[c] += attn_out.v[c];

  Tensor normed2(1, d);
  rmsnorm_row(x.row(0), ps.data(prefix + ".mlp_norm.gain"), normed2.row(0), d);
  Tensor gate = matmul(normed2, ps.tensor(prefix + ".mlp.w1"));
  Tensor up = matmul(normed2, ps.tensor(prefix + ".mlp.w3"));
  for (size_t i = 0; i < gate.size(); ++i) gate.v[i] = silu(gate.v[i]) * up.v[i];
  Tensor mlp_out = matmul(gate, ps.tensor(prefix + ".mlp.w2"));
  for (int c = 0; c < d; ++c) x.v[c] += mlp_out.v[c];
}

}  // namespace

StreamSession::StreamSession(const ExperimentConfig& cfg, const ParamStore& ps,
                             const AcousticTokens& prompt_ac, SessionMode mode,
                             int prompt_frames)
    : cfg_(cfg), ps_(ps), mode_(mode) {
  if (prompt_ac.frames < 2 || prompt_ac.frames % 2 != 0)
    throw std::invalid_argument("session: prompt violates the frame law");
  const int want = prompt_frames < 0 ? cfg.stream.prompt_frames : prompt_frames;
  const int p = std::min(want, prompt_ac.frames / 2);
  if (p < 1) throw std::invalid_argument("session: empty prompt");

  AcousticTokens crop(2 * p, prompt_ac.quantizers);
  for (int f = 0; f < 2 * p; ++f)
    for (int l = 0; l < prompt_ac.quantizers; ++l) crop.at(f, l) = prompt_ac.at(f, l);
  prompt_crop_ = crop;

  if (mode_ == SessionMode::NonStream) return;  // batch path only

  enc_cache_.resize(cfg.encoder.num_layers);
  lm_cache_.resize(cfg.backbone.lm_layers);
  enc_raw_states_ = Tensor(0, cfg.encoder.hidden_dim);
  last_hidden_ = Tensor(1, cfg.backbone.lm_hidden);

  // Prompt path: same computation as the batched pipeline, then ingested
  // position by position into the LM cache.
  ConnectorOutput prompt_rows = semantic_stream(cfg_, ps_, prompt_crop_, false);
  for (int t = 0; t < p; ++t) {
    push_position(prompt_rows.embeddings.row(t), &last_hidden_);
    for (int r = 0; r < 2; ++r) {
      std::vector<std::int32_t> codes(prompt_crop_.quantizers);
      for (int l = 0; l < prompt_crop_.quantizers; ++l)
        codes[l] = prompt_crop_.at(2 * t + r, l);
      Tensor emb = embed_ac_frame(codes.data());
      push_position(emb.row(0), &last_hidden_);
    }
  }
}

Tensor StreamSession::embed_ac_frame(const std::int32_t* codes) const {
  const int d = cfg_.backbone.lm_hidden;
  Tensor emb(1, d);
  for (int l = 0; l < cfg_.corpus.num_quantizers; ++l) {
    const Real* row = ps_.data("backbone.embed.ac" + std::to_string(l)) +
                      static_cast<size_t>(codes[l]) * d;
    for (int c = 0; c < d; ++c) emb.v[c] += row[c];
  }
  return emb;
}

void StreamSession::push_position(const Real* input_row, Tensor* hidden_out) {
  const int d = cfg_.backbone.lm_hidden;
  if (lm_positions_ >= cfg_.backbone.max_positions)
    throw std::invalid_argument("session: sequence exceeds max_positions");
  Tensor x(1, d);
  const Real* pos = ps_.data("backbone.embed.pos") + static_cast<size_t>(lm_positions_) * d;
  for (int c = 0; c < d; ++c) x.v[c] = input_row[c] + pos[c];
  LoraSpec lora{"lora", cfg_.lora.rank, cfg_.lora.alpha};
  for (int i = 0; i < cfg_.backbone.lm_layers; ++i) {
    LayerKV& kv = lm_cache_[i];
    layer_step(ps_, "backbone.layer" + std::to_string(i), cfg_.backbone.lm_heads, &lora,
               kv.k, kv.v, kv.rows, x);
  }
  ++lm_positions_;
  if (hidden_out) {
    *hidden_out = Tensor(1, d);
    rmsnorm_row(x.row(0), ps_.data("backbone.final_norm.gain"), hidden_out->row(0), d);
  }
}

void StreamSession::process_pair(const Real* e0, const Real* e1) {
  const int d = cfg_.encoder.hidden_dim;
  if (enc_rows_ >= cfg_.encoder.max_positions)
    throw std::invalid_argument("session: encoder sequence exceeds max_positions");
  Tensor x(1, d);
  const Real* pos = ps_.data("encoder.embed.pos") + static_cast<size_t>(enc_rows_) * d;
  for (int c = 0; c < d; ++c) x.v[c] = 0.5 * (e0[c] + e1[c]) + pos[c];
  for (int i = 0; i < cfg_.encoder.num_layers; ++i) {
    LayerKV& kv = enc_cache_[i];
    layer_step(ps_, "encoder.layer" + std::to_string(i), cfg_.encoder.num_heads, nullptr,
               kv.k, kv.v, kv.rows, x);
  }
  Tensor raw(1, d);
  rmsnorm_row(x.row(0), ps_.data("encoder.final_norm.gain"), raw.row(0), d);
  enc_raw_states_.v.insert(enc_raw_states_.v.end(), raw.v.begin(), raw.v.end());
  ++enc_rows_;
  enc_raw_states_.rows = enc_rows_;
}

AcousticTokens StreamSession::emit_available() {
  const int L = cfg_.corpus.num_quantizers;
  const int shift = cfg_.encoder.delay_steps / 2;
  AcousticTokens out(0, L);
  while (next_emit_step_ + shift < enc_rows_) {
    const int t = next_emit_step_;
    // Connector on the delayed raw row.
    Tensor states(1, cfg_.encoder.hidden_dim);
    std::memcpy(states.row(0), enc_raw_states_.row(t + shift),
                cfg_.encoder.hidden_dim * sizeof(Real));
    Tensor logits = matmul(states, ps_.tensor("encoder.head.logits"));
    ConnectorOutput row = connect(cfg_, ps_, states, logits);

    push_position(row.embeddings.row(0), &last_hidden_);
    for (int r = 0; r < 2; ++r) {
      std::vector<std::int32_t> codes =
          predictor_decode(cfg_, ps_, last_hidden_.row(0), SamplingSpec{}, nullptr);
      emitted_codes_.insert(emitted_codes_.end(), codes.begin(), codes.end());
      ++emitted_frames_;
      Tensor emb = embed_ac_frame(codes.data());
      push_position(emb.row(0), &last_hidden_);
      out.codes.insert(out.codes.end(), codes.begin(), codes.end());
      ++out.frames;
    }
    ++next_emit_step_;
  }
  return out;
}

AcousticTokens StreamSession::feed_chunk(const AcousticTokens& frames) {
  if (mode_ != SessionMode::Stream)
    throw StateError("feed_chunk: session is not in streaming mode");
  if (closed_) throw StateError("feed_chunk: session is closed");
  if (frames.frames > 0 && frames.quantizers != cfg_.corpus.num_quantizers)
    throw std::invalid_argument("feed_chunk: quantizer count mismatch");
  Stopwatch sw(compute_seconds_);

  for (int f = 0; f < frames.frames; ++f) {
    std::vector<std::int32_t> codes(frames.quantizers);
    for (int l = 0; l < frames.quantizers; ++l) {
      if (frames.at(f, l) < 0 || frames.at(f, l) >= cfg_.corpus.codec_vocab)
        throw std::invalid_argument("feed_chunk: code out of vocab range");
      codes[l] = frames.at(f, l);
    }
    // Encoder-side embedding (separate tables from the LM).
    const int d = cfg_.encoder.hidden_dim;
    Tensor emb(1, d);
    for (int l = 0; l < frames.quantizers; ++l) {
      const Real* row = ps_.data("encoder.embed.ac" + std::to_string(l)) +
                        static_cast<size_t>(codes[l]) * d;
      for (int c = 0; c < d; ++c) emb.v[c] += row[c];
    }
    if (enc_has_pending_) {
      process_pair(enc_pending_.data(), emb.row(0));
      enc_has_pending_ = false;
    } else {
      enc_pending_.assign(emb.v.begin(), emb.v.end());
      enc_has_pending_ = true;
    }
    ++received_frames_;
    last_frame_codes_ = codes;
  }
  return emit_available();
}

AcousticTokens StreamSession::close() {
  if (mode_ != SessionMode::Stream) {
    closed_ = true;
    return AcousticTokens(0, cfg_.corpus.num_quantizers);
  }
  if (closed_) throw StateError("close: session already closed");
  closed_ = true;
  Stopwatch sw(compute_seconds_);

  AcousticTokens out(0, cfg_.corpus.num_quantizers);
  if (received_frames_ == 0) return out;

  // Flush: repeat-pad the last received frame until every source step has
  // its delayed encoder row, then trim to the received length.
  const int shift = cfg_.encoder.delay_steps / 2;
  const long steps = (received_frames_ + 1) / 2;
  const int d = cfg_.encoder.hidden_dim;
  Tensor emb(1, d);
  for (int l = 0; l < cfg_.corpus.num_quantizers; ++l) {
    const Real* row = ps_.data("encoder.embed.ac" + std::to_string(l)) +
                      static_cast<size_t>(last_frame_codes_[l]) * d;
    for (int c = 0; c < d; ++c) emb.v[c] += row[c];
  }
  while (enc_rows_ < steps + shift) {
    if (enc_has_pending_) {
      process_pair(enc_pending_.data(), emb.row(0));
      enc_has_pending_ = false;
    } else {
      process_pair(emb.row(0), emb.row(0));
    }
  }
  AcousticTokens tail = emit_available();
  // Trim emissions beyond the received stream length (odd final chunk).
  const long excess = emitted_frames_ - received_frames_;
  if (excess > 0) {
    tail.frames -= static_cast<int>(excess);
    tail.codes.resize(static_cast<size_t>(tail.frames) * tail.quantizers);
    emitted_frames_ = received_frames_;
    emitted_codes_.resize(static_cast<size_t>(emitted_frames_) *
                          cfg_.corpus.num_quantizers);
  }
  return tail;
}

AcousticTokens StreamSession::run_batch(const AcousticTokens& source) {
  if (mode_ != SessionMode::NonStream)
    throw StateError("run_batch: session is not in non-streaming mode");
  if (closed_) throw StateError("run_batch: session is closed");
  Stopwatch sw(compute_seconds_);
  if (source.frames == 0) {
    closed_ = true;
    return AcousticTokens(0, cfg_.corpus.num_quantizers);
  }
  ConnectorOutput prompt_rows = semantic_stream(cfg_, ps_, prompt_crop_, true);
  ConnectorOutput source_rows = semantic_stream(cfg_, ps_, source, true);
  BackboneRun run;
  run.use_lora = true;
  run.second_lora = true;
  AcousticTokens out =
      backbone_generate(cfg_, ps_, SemSide::embedded(prompt_rows.embeddings), prompt_crop_,
                        SemSide::embedded(source_rows.embeddings), run);
  emitted_frames_ = out.frames;
  closed_ = true;
  return out;
}

LatencyReport StreamSession::latency() const {
  const double audio_seconds = emitted_frames_ * (AcousticTokens::kFrameMs / 1000.0);
  const double rtf_model = audio_seconds > 0 ? compute_seconds_ / audio_seconds : 0.0;
  return latency_report(cfg_.encoder.delay_steps * AcousticTokens::kFrameMs,
                        AcousticTokens::kFrameMs, rtf_model, cfg_.stream.rtf_codec);
}

// ---------------------------------------------------------------------------
// Token-stream framing
// ---------------------------------------------------------------------------

void write_token_stream(const std::string& path, const std::vector<AcousticTokens>& chunks) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write token stream: " + path);
  for (const auto& chunk : chunks) {
    const std::int32_t n = chunk.frames;
    f.write(reinterpret_cast<const char*>(&n), 4);
    for (const auto code : chunk.codes) {
      const std::int32_t c = code;
      f.write(reinterpret_cast<const char*>(&c), 4);
    }
  }
  if (!f) throw std::runtime_error("token stream write failed: " + path);
}

std::vector<AcousticTokens> read_token_stream(const std::string& path, int quantizers) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open token stream: " + path);
  std::vector<AcousticTokens> chunks;
  while (true) {
    std::int32_t n = 0;
    f.read(reinterpret_cast<char*>(&n), 4);
    if (!f) break;
    if (n < 0) throw std::runtime_error("token stream: negative frame count");
    AcousticTokens chunk(n, quantizers);
    for (size_t i = 0; i < chunk.codes.size(); ++i) {
      std::int32_t c = 0;
      f.read(reinterpret_cast<char*>(&c), 4);
      if (!f) throw std::runtime_error("token stream: truncated chunk");
      chunk.codes[i] = c;
    }
    chunks.push_back(std::move(chunk));
  }
  return chunks;
}

}  // namespace svc
