#pragma once

#include <cstdint>
#include <string>

#include "svc/corpus.hpp"

namespace svc {

enum class AttentionMode { Causal, Bidirectional };

struct EncoderSection {
  int num_layers = 2;         // full-scale reference: 3
  int num_heads = 4;          // full-scale reference: 8
  int hidden_dim = 64;        // full-scale reference: 1024
  int intermediate_dim = 128; // full-scale reference: 4096
  int delay_steps = 4;        // k, in 20 ms acoustic frames (4 -> 80 ms)
  int max_positions = 512;
};

struct ConnectorSection {
  int unit_dim = 64;      // full-scale reference: 1024
  int residual_dim = 16;  // full-scale reference: 16; 0 disables the path
  bool reuse_backbone_table = true;
};

struct BackboneSection {
  int lm_layers = 3;   // full-scale reference: 6
  int lm_hidden = 64;
  int lm_heads = 4;
  int interleave_ratio = 2;  // acoustic frames per semantic frame
  int foresight_horizon = 2;
  double mask_prob = 0.5;
  double mask_span_frac = 0.3;  // max masked span as a fraction of T'
  int max_positions = 512;
};

struct LoraSection {
  int rank = 8;        // full-scale reference: 32
  double alpha = 1.0;  // full-scale reference: 1
};

struct TrainSection {
  std::uint64_t seed = 42;
  int pretrain_steps = 2000;
  int finetune_steps = 500;
  int dual_encoder_steps = 600;
  int dual_finetune_steps = 400;
  int batch_size = 16;
  double lr_pretrain = 5e-4;   // full-scale reference: 5e-4
  double lr_finetune = 4e-4;   // full-scale reference: 4e-4
  double decay_rate = 0.98;
  int decay_period_pretrain = 50;
  int decay_period_finetune = 50;  // full-scale reference: 10k of 100k steps
  double weight_decay = 0.01;
  double self_refine_prob = 0.5;
  int refine_pairs = 150;
  int min_prompt_frames = 4;
  int min_source_frames = 4;
  int eval_pairs = 100;  // full-scale reference: 600 testing pairs
};

struct StreamSection {
  int prompt_frames = 8;  // semantic frames; full-scale reference: 3 s prompt
  double rtf_codec = 0.004;
};

struct ExperimentConfig {
  CorpusConfig corpus;
  EncoderSection encoder;
  ConnectorSection connector;
  BackboneSection backbone;
  LoraSection lora;
  TrainSection train;
  StreamSection stream;

  void validate() const;

  // Canonical text form (stable ordering); basis of all fingerprints.
  std::string canonical() const;

  // Architecture fingerprint of one checkpoint group. Groups only depend on
  // the config sections that shape their tensors, so e.g. a backbone trained
  // once can be reused across encoder delay ablations.
  std::uint64_t group_fingerprint(const std::string& group) const;
};

// Parses the documented key/value format. Unknown sections or keys and
// malformed values throw std::invalid_argument citing the line number.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Default config template with the full-scale reference values documented
// alongside the toy defaults.
std::string default_config_text();

}  // namespace svc
