#pragma once

#include <cstdint>
#include <vector>

#include "svc/config.hpp"
#include "svc/corpus.hpp"
#include "svc/graph.hpp"
#include "svc/loss.hpp"
#include "svc/rng.hpp"

namespace svc {

// Conversion backbone: a fully causal LM over interleaved semantic/acoustic
// positions. Each semantic frame t occupies positions [SEM(t), AC(2t),
// AC(2t+1)]; the speaker prompt section precedes the source section. A
// single-layer transformer predictor decodes the L codec codes of one frame
// sequentially, conditioned on the LM hidden state of the preceding position.

// Semantic input for a span of frames: discrete tokens (pre-training) or
// continuous embedding rows (connector output). Both occupy the same slots.
struct SemSide {
  std::vector<std::int32_t> tokens;
  Tensor rows;
  bool continuous = false;

  int frames() const { return continuous ? rows.rows : static_cast<int>(tokens.size()); }
  static SemSide discrete(std::vector<std::int32_t> t) {
    SemSide s;
    s.tokens = std::move(t);
    return s;
  }
  static SemSide embedded(Tensor r) {
    SemSide s;
    s.rows = std::move(r);
    s.continuous = true;
    return s;
  }
};

struct InterleavedSequence {
  SemSide prompt_sem;
  SemSide source_sem;
  std::vector<std::int32_t> ac_codes;  // (2*total_frames) x L row-major; -1 unfilled
  std::vector<std::uint8_t> sem_masked;  // per frame; replaced by mask embedding
  int quantizers = 0;

  int prompt_frames() const { return prompt_sem.frames(); }
  int source_frames() const { return source_sem.frames(); }
  int total_frames() const { return prompt_sem.frames() + source_sem.frames(); }
  int positions() const { return 3 * total_frames(); }
  static int sem_position(int t) { return 3 * t; }
  static int ac_position(int f) { return 3 * (f / 2) + 1 + (f & 1); }
  std::int32_t ac_code(int f, int l) const {
    return ac_codes[static_cast<size_t>(f) * quantizers + l];
  }
  void set_ac_code(int f, int l, std::int32_t c) {
    ac_codes[static_cast<size_t>(f) * quantizers + l] = c;
  }
};

// Layout is validated against the 2:1 frame law; source_ac may be empty
// (generation pending) or cover exactly the source frames.
InterleavedSequence build_sequence(const ExperimentConfig& cfg, const SemSide& prompt_sem,
                                   const AcousticTokens& prompt_ac,
                                   const SemSide& source_sem,
                                   const AcousticTokens& source_ac);

// With the configured probability, replaces a contiguous span of up to
// mask_span semantic positions with the learned mask embedding. Targets are
// untouched: masking only affects inputs.
InterleavedSequence apply_semantic_mask(const InterleavedSequence& seq, double mask_prob,
                                        int mask_span, Rng& rng);

struct BackboneRun {
  bool use_lora = false;
  bool second_lora = false;  // "lora2" adapter set
};

struct BackboneGraphOut {
  int hidden = -1;       // positions x lm_hidden (final norm)
  int sem_logits = -1;   // total_frames x semantic_vocab; row t predicts token t+1
  int foresight = -1;    // total_frames x d_sem
  // Per quantizer: (2*total_frames - pred_from_frame) x codec_vocab; row i is
  // the teacher-forced distribution for frame pred_from_frame + i.
  std::vector<int> ac_logits;
  int pred_from_frame = 0;
  int positions = 0;
};

// Optional graph-node overrides for the continuous semantic sections; this is
// how end-to-end training backpropagates through connector and encoder.
struct SequenceNodes {
  int prompt_rows = -1;
  int source_rows = -1;
};

void register_backbone_params(ParamStore& ps, const ExperimentConfig& cfg);
void register_backbone_lora_params(ParamStore& ps, const ExperimentConfig& cfg,
                                   bool second = false);

// limit_positions < 0 = all; heads (semantic, foresight, predictor) need the
// full sequence with filled codes and are skipped when with_heads is false.
// predictor_from_frame limits teacher-forced predictor work to the frames a
// loss will actually supervise.
BackboneGraphOut backbone_forward_graph(Graph& g, const ExperimentConfig& cfg,
                                        const InterleavedSequence& seq,
                                        const BackboneRun& run, int limit_positions = -1,
                                        bool with_heads = true,
                                        const SequenceNodes* nodes = nullptr,
                                        int predictor_from_frame = 0);

struct BackboneForward {
  Tensor hidden;
  Tensor sem_logits;
  Tensor foresight;
  Tensor ac_logits;  // (2*total_frames*L) x codec_vocab; row f*L+l
};
BackboneForward backbone_forward(const ExperimentConfig& cfg, const ParamStore& ps,
                                 const InterleavedSequence& seq,
                                 const BackboneRun& run = {});

struct BackboneTargets {
  std::vector<std::int32_t> semantic;  // total_frames oracle symbols
  Tensor teacher;                      // total_frames x d_sem
};

struct BackboneLossNodes {
  int s_ce = -1;
  int a_ce = -1;
  int tf = -1;
  int total = -1;
};
// L_Backbone = L_s_ce + L_a_ce + L_TF (unweighted). Acoustic CE covers source
// frames only; semantic CE is next-token prediction at semantic positions;
// L_TF matches a projection of each semantic hidden against the mean of the
// next foresight_horizon teacher rows.
BackboneLossNodes backbone_loss_graph(Graph& g, const ExperimentConfig& cfg,
                                      const BackboneGraphOut& out,
                                      const InterleavedSequence& seq,
                                      const BackboneTargets& targets);
LossReport backbone_loss(const ExperimentConfig& cfg, const ParamStore& ps,
                         const InterleavedSequence& seq, const BackboneTargets& targets,
                         const BackboneRun& run = {});

enum class Sampling { Greedy, TopK };
struct SamplingSpec {
  Sampling kind = Sampling::Greedy;
  int top_k = 8;
  std::uint64_t seed = 0;
};

// Autoregressive decode over AC slots; SEM slots are teacher-forced from the
// provided source side. Returns the generated source-section frames.
AcousticTokens backbone_generate(const ExperimentConfig& cfg, const ParamStore& ps,
                                 const SemSide& prompt_sem, const AcousticTokens& prompt_ac,
                                 const SemSide& source_sem, const BackboneRun& run = {},
                                 const SamplingSpec& sampling = {});

// One frame of codes from the predictor given the conditioning hidden state.
// Shared by batched generation and the incremental stream path.
std::vector<std::int32_t> predictor_decode(const ExperimentConfig& cfg,
                                           const ParamStore& ps, const Real* cond,
                                           const SamplingSpec& sampling, Rng* rng);

// Folds every adapter of the set into its base weight:
// W += alpha/rank * A B. Used by the merge-equivalence check.
void merge_lora_into_base(ParamStore& ps, const ExperimentConfig& cfg,
                          bool second = false);

// Closed-form adapter parameter count: 3 projections * layers * 2*d*rank.
long backbone_lora_param_count(const ExperimentConfig& cfg);
long encoder_lora_param_count(const ExperimentConfig& cfg);
long encoder_final_linear_param_count(const ExperimentConfig& cfg);

}  // namespace svc
