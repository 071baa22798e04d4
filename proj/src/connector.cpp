#include "svc/connector.hpp"

#include <stdexcept>

namespace svc {

void register_connector_params(ParamStore& ps, const ExperimentConfig& cfg,
                               bool second) {
  const std::string prefix = second ? "connector2" : "connector";
  const std::string group = prefix;
  if (cfg.connector.residual_dim > 0) {
    ps.add(prefix + ".down", group, cfg.encoder.hidden_dim, cfg.connector.residual_dim);
    ps.add(prefix + ".up", group, cfg.connector.residual_dim, cfg.connector.unit_dim);
  }
  if (!cfg.connector.reuse_backbone_table)
    ps.add(prefix + ".embed.table", group, cfg.corpus.semantic_vocab,
           cfg.connector.unit_dim);
}

int connector_graph(Graph& g, const ExperimentConfig& cfg, int states, int logits,
                    const ConnectorRun& run) {
  if (g.value(logits).cols != cfg.corpus.semantic_vocab)
    throw std::invalid_argument("connector: logits width != semantic_vocab");
  if (g.value(states).cols != cfg.encoder.hidden_dim)
    throw std::invalid_argument("connector: states width != encoder hidden_dim");
  const std::string prefix = run.second ? "connector2" : "connector";
  int table = g.param(cfg.connector.reuse_backbone_table ? "backbone.embed.sem"
                                                         : prefix + ".embed.table");
  if (g.value(table).rows != cfg.corpus.semantic_vocab)
    throw std::invalid_argument("connector: embedding table row mismatch");
  int main_branch = g.matmul(g.softmax_rows(logits), table);
  if (cfg.connector.residual_dim == 0 || run.ablate_residual) return main_branch;
  int residual = g.matmul(g.matmul(states, g.param(prefix + ".down")),
                          g.param(prefix + ".up"));
  return g.add(main_branch, residual);
}

ConnectorOutput connect(const ExperimentConfig& cfg, const ParamStore& ps,
                        const Tensor& states, const Tensor& logits,
                        const ConnectorRun& run) {
  if (states.rows != logits.rows)
    throw std::invalid_argument("connector: states/logits row mismatch");
  Graph g(&ps);
  int out = connector_graph(g, cfg, g.constant(states), g.constant(logits), run);
  return ConnectorOutput{g.value(out)};
}

ConnectorOutput connect(const ExperimentConfig& cfg, const ParamStore& ps,
                        const SemanticHidden& h, const ConnectorRun& run) {
  return connect(cfg, ps, h.states, h.logits, run);
}

long connector_param_count(const ExperimentConfig& cfg) {
  long n = 0;
  if (cfg.connector.residual_dim > 0)
    n += static_cast<long>(cfg.encoder.hidden_dim) * cfg.connector.residual_dim +
         static_cast<long>(cfg.connector.residual_dim) * cfg.connector.unit_dim;
  if (!cfg.connector.reuse_backbone_table)
    n += static_cast<long>(cfg.corpus.semantic_vocab) * cfg.connector.unit_dim;
  return n;
}

}  // namespace svc
