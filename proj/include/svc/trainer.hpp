#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "svc/backbone.hpp"
#include "svc/config.hpp"
#include "svc/connector.hpp"
#include "svc/corpus.hpp"
#include "svc/encoder.hpp"
#include "svc/loss.hpp"
#include "svc/params.hpp"

namespace svc {

enum class Stage {
  PretrainBackbone,
  PretrainEncoder,
  Finetune,
  DualEncoder,   // dual-mode extension phase 1: encoder adapters + linear2
  DualFinetune,  // dual-mode extension phase 2: connector2 + backbone-lora2
};

// How the fine-tuning stage routes gradients into the backbone. Lora is the
// shipped configuration; the others exist for the ablation axes.
enum class FinetuneVariant { Lora, FrozenBackbone, FullBackbone };

struct TrainPlan {
  Stage stage = Stage::PretrainBackbone;
  int steps = 0;
  double learning_rate = 5e-4;
  double decay_rate = 0.98;
  int decay_period = 50;
  std::uint64_t seed = 42;
  double self_refine_prob = 0.0;  // only the fine-tune stage may set this > 0
  int batch_size = 16;

  void validate() const;
};

struct TrainLogEntry {
  int step = 0;
  LossReport loss;
  double lr = 0.0;
};
using MetricsSink = std::function<void(const TrainLogEntry&)>;

// Registers every streaming-path group: backbone, encoder, linear, connector,
// backbone-lora. with_dual adds encoder-lora, linear2, connector2,
// backbone-lora2 (required before extend_dual_mode or non-streaming runs).
void register_model(ParamStore& ps, const ExperimentConfig& cfg, bool with_dual);

// Deterministic init of every registered tensor from the train seed.
void init_model(ParamStore& ps, const ExperimentConfig& cfg);

// Utterance indices usable as training items (train speakers, not held out)
// and the held-out measurement set (train speakers, held-out rounds).
std::vector<int> train_pool(const CorpusConfig& cfg, const std::vector<Utterance>& corpus);
std::vector<int> heldout_pool(const CorpusConfig& cfg, const std::vector<Utterance>& corpus);

// Plans derived from the config's train section for each stage.
TrainPlan plan_for(const ExperimentConfig& cfg, Stage stage);

LossReport pretrain_backbone(ParamStore& ps, const ExperimentConfig& cfg,
                             const std::vector<Utterance>& corpus, const TrainPlan& plan,
                             const MetricsSink& sink = nullptr);

LossReport pretrain_encoder(ParamStore& ps, const ExperimentConfig& cfg,
                            const std::vector<Utterance>& corpus, const TrainPlan& plan,
                            const MetricsSink& sink = nullptr);

struct RefinementPair {
  int source_index = -1;   // corpus index of the original utterance
  int target_speaker = -1;
  Utterance synthetic;     // same semantic stream, converted acoustics
};

// Uses the pre-trained backbone (greedy, discrete semantics) to build
// pseudo-parallel pairs toward randomly drawn different training speakers.
std::vector<RefinementPair> build_refinement_pairs(const ExperimentConfig& cfg,
                                                   const ParamStore& ps,
                                                   const std::vector<Utterance>& corpus,
                                                   int count, std::uint64_t seed);

// End-to-end fine-tuning: gradients flow into {connector, backbone-lora,
// linear} only (variant-dependent); per sample, with probability
// self_refine_prob the source or target side (fair coin) is swapped for the
// synthetic pair member.
LossReport finetune(ParamStore& ps, const ExperimentConfig& cfg,
                    const std::vector<Utterance>& corpus,
                    const std::vector<RefinementPair>& pairs, const TrainPlan& plan,
                    const MetricsSink& sink = nullptr,
                    FinetuneVariant variant = FinetuneVariant::Lora);

// Dual-mode extension: trains {encoder-lora, linear2} for bidirectional
// encoding, then {connector2, backbone-lora2, linear2} end to end. Streaming
// parameters are never touched.
void extend_dual_mode(ParamStore& ps, const ExperimentConfig& cfg,
                      const std::vector<Utterance>& corpus,
                      const MetricsSink& sink = nullptr);

// Content hash per checkpoint group; freeze-discipline checks diff these.
std::map<std::string, std::uint64_t> group_hashes(const ParamStore& ps);

// Trainable parameter count for a stage (the accounting the closed-form
// formula is asserted against).
long trainable_param_count(const ParamStore& ps, const ExperimentConfig& cfg,
                           Stage stage, FinetuneVariant variant = FinetuneVariant::Lora);

// The end-to-end semantic path used everywhere a continuous semantic stream
// is needed: delayed encoder rows through the connector.
ConnectorOutput semantic_stream(const ExperimentConfig& cfg, const ParamStore& ps,
                                const AcousticTokens& a, bool nonstream = false);

}  // namespace svc
