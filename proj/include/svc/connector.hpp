#pragma once

#include "svc/config.hpp"
#include "svc/encoder.hpp"
#include "svc/graph.hpp"

namespace svc {

// Residual-bottleneck connector.
//
// Main branch: softmax over the encoder's semantic logits, soft-looked-up in
// the backbone's semantic embedding table, which places the output exactly in
// the embedding space the backbone consumed during pre-training. Residual
// branch: the pre-softmax hidden states squeezed through a low-dimensional
// bottleneck, recovering what the normalization discards. residual_dim = 0
// disables the residual path entirely.

struct ConnectorOutput {
  Tensor embeddings;  // T' x unit_dim
};

// Registers group "connector" (or "connector2" when `second`).
void register_connector_params(ParamStore& ps, const ExperimentConfig& cfg,
                               bool second = false);

struct ConnectorRun {
  bool second = false;          // use the "connector2" parameter set
  bool ablate_residual = false; // inference-time switch: drop the residual path
};

// states: T' x encoder hidden, logits: T' x semantic_vocab.
int connector_graph(Graph& g, const ExperimentConfig& cfg, int states, int logits,
                    const ConnectorRun& run = {});

ConnectorOutput connect(const ExperimentConfig& cfg, const ParamStore& ps,
                        const SemanticHidden& h, const ConnectorRun& run = {});
ConnectorOutput connect(const ExperimentConfig& cfg, const ParamStore& ps,
                        const Tensor& states, const Tensor& logits,
                        const ConnectorRun& run = {});

// Trainable parameter count of one connector set.
long connector_param_count(const ExperimentConfig& cfg);

}  // namespace svc
