#pragma once

#include <vector>

#include "svc/backbone.hpp"
#include "svc/config.hpp"
#include "svc/corpus.hpp"
#include "svc/params.hpp"

namespace svc {

struct LatencyReport {
  double delay_ms = 0.0;
  double token_ms = 0.0;
  double rtf_model = 0.0;
  double rtf_codec = 0.0;
  double total_ms = 0.0;  // delay + token + token * (rtf_model + rtf_codec)
};

// Applies the pipeline-latency formula exactly; negative inputs are rejected.
LatencyReport latency_report(double delay_ms, double token_ms, double rtf_model,
                             double rtf_codec);

enum class SessionMode { Stream, NonStream };

// Chunked incremental end-to-end conversion. One session is one logical
// thread of control; sessions share frozen parameters and never revise an
// emitted frame. Nothing is emitted until delay_steps + 2 source frames have
// arrived; close() flushes the delay buffer by repeat-padding the last frame.
class StreamSession {
 public:
  // The prompt is fully ingested into the LM state before any source frame;
  // prompt_frames semantic frames are taken from the prompt utterance
  // (capped to its length; < 0 uses the configured default).
  StreamSession(const ExperimentConfig& cfg, const ParamStore& ps,
                const AcousticTokens& prompt_ac, SessionMode mode,
                int prompt_frames = -1);

  StreamSession(const StreamSession&) = delete;
  StreamSession& operator=(const StreamSession&) = delete;

  // Stream mode only. Returns converted frames that became available.
  AcousticTokens feed_chunk(const AcousticTokens& frames);

  // Flushes buffered frames and closes the session.
  AcousticTokens close();

  // NonStream mode only: converts the whole utterance through the
  // bidirectional parameter set in one shot.
  AcousticTokens run_batch(const AcousticTokens& source);

  LatencyReport latency() const;

  bool closed() const { return closed_; }
  long emitted_frames() const { return emitted_frames_; }
  // LM hidden state after the latest pushed position (diagnostics; used by
  // the incremental/batch agreement checks).
  const Tensor& last_hidden() const { return last_hidden_; }

 private:
  struct LayerKV {
    std::vector<Real> k, v;
    int rows = 0;
  };

  void push_position(const Real* input_row, Tensor* hidden_out);
  void process_pair(const Real* f0, const Real* f1);
  AcousticTokens emit_available();
  Tensor embed_ac_frame(const std::int32_t* codes) const;

  const ExperimentConfig& cfg_;
  const ParamStore& ps_;
  SessionMode mode_;
  bool closed_ = false;
  AcousticTokens prompt_crop_;
  std::vector<std::int32_t> last_frame_codes_;

  // Encoder incremental state (semantic rate).
  std::vector<LayerKV> enc_cache_;
  std::vector<Real> enc_pending_;  // embedded but unpaired acoustic frame
  bool enc_has_pending_ = false;
  int enc_rows_ = 0;
  Tensor enc_raw_states_;  // grows by row; raw causal rows
  std::vector<Real> delayed_row_scratch_;

  // LM incremental state (position rate).
  std::vector<LayerKV> lm_cache_;
  int lm_positions_ = 0;
  Tensor last_hidden_;

  long received_frames_ = 0;
  long emitted_frames_ = 0;
  int next_emit_step_ = 0;
  std::vector<std::int32_t> emitted_codes_;  // all emitted frames, row-major

  double compute_seconds_ = 0.0;
};

// Binary token-stream framing shared with the CLI: per chunk a frame count
// then frames x L little-endian int32 codes.
void write_token_stream(const std::string& path, const std::vector<AcousticTokens>& chunks);
std::vector<AcousticTokens> read_token_stream(const std::string& path, int quantizers);

}  // namespace svc
