#pragma once

#include <vector>

#include "svc/config.hpp"
#include "svc/corpus.hpp"
#include "svc/graph.hpp"
#include "svc/loss.hpp"
#include "svc/params.hpp"

namespace svc {

// Causal transformer mapping acoustic tokens to semantic hidden states.
//
// Input frames are embedded as the sum of per-quantizer code embeddings,
// mean-pooled 2:1 to the semantic rate, then run through pre-norm blocks.
// The k-step lookahead is realized by shifting supervision targets: raw row
// j is trained to predict the semantic symbol at step j - k/2, so the
// architecture itself stays strictly causal and the delayed estimate for
// step t is read from row t + k/2.

struct SemanticHidden {
  Tensor states;  // T' x hidden_dim, final-norm output
  Tensor logits;  // T' x semantic_vocab
  // Projected intermediate layer outputs (T' x d_sem), one per supervised
  // layer (every layer except the last).
  std::vector<Tensor> intermediate_states;
  int delay_steps = 0;  // k carried along for target alignment
};

// Node-level view of the same outputs for training graphs.
struct EncoderGraphOut {
  int states = -1;
  int logits = -1;
  std::vector<int> intermediate;
  int rows = 0;
};

// Registers groups "encoder" and "linear".
void register_encoder_params(ParamStore& ps, const ExperimentConfig& cfg);
// Registers the non-streaming adapter set: groups "encoder-lora", "linear2".
void register_encoder_dual_params(ParamStore& ps, const ExperimentConfig& cfg);

struct EncoderRun {
  AttentionMode mode = AttentionMode::Causal;
  bool use_lora = false;       // "encoder-lora" adapters
  bool second_linear = false;  // logits through "linear2"
};

EncoderGraphOut encoder_graph(Graph& g, const ExperimentConfig& cfg,
                              const AcousticTokens& a, const EncoderRun& run = {});

SemanticHidden encode(const ExperimentConfig& cfg, const ParamStore& ps,
                      const AcousticTokens& a, const EncoderRun& run = {});

// L_Encoder = semantic CE + intermediate-layer MSE, with targets shifted by
// the configured delay. Lengths: c must align with s; h may carry up to
// delay_steps/2 extra rows (padded encodes) which supervise the tail symbols.
LossReport encoder_loss(const SemanticHidden& h, const SemanticTokens& s,
                        const ContinuousSemantic& c);

struct EncoderLossNodes {
  int ce = -1;
  int mse = -1;
  int total = -1;
};
// delay_steps: k for causal training, 0 for the bidirectional (non-streaming)
// variant where no lookahead shift applies.
EncoderLossNodes encoder_loss_graph(Graph& g, const ExperimentConfig& cfg,
                                    const EncoderGraphOut& out, const SemanticTokens& s,
                                    const ContinuousSemantic& c, int delay_steps);

// Acoustic input extended by `delay_steps` repeat-last frames, so delayed
// rows exist for every semantic step of the utterance. This is the canonical
// end-of-stream handling, matching the stream engine's flush.
AcousticTokens pad_for_delay(const AcousticTokens& a, int delay_steps);

// Delayed semantic-rate view: row t of the result corresponds to semantic
// step t (i.e. raw row t + k/2 of an encode over pad_for_delay input).
// Returns (states, logits) limited to the original T' steps.
struct DelayedEncoding {
  Tensor states;
  Tensor logits;
};
DelayedEncoding encode_delayed(const ExperimentConfig& cfg, const ParamStore& ps,
                               const AcousticTokens& a, const EncoderRun& run = {});

// Fraction of steps where argmax(logits) matches the oracle symbols, using
// the same padded, delay-aligned pipeline as conversion.
double encoder_semantic_accuracy(const ExperimentConfig& cfg, const ParamStore& ps,
                                 const std::vector<const Utterance*>& utts,
                                 const EncoderRun& run = {});

}  // namespace svc
