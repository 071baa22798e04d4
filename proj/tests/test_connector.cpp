#include <doctest.h>

#include <cmath>

#include "svc/connector.hpp"
#include "svc/trainer.hpp"

using namespace svc;

namespace {

struct Fixture {
  ExperimentConfig cfg;
  ParamStore ps;
  Fixture() {
    register_model(ps, cfg, false);
    init_model(ps, cfg);
  }
};

}  // namespace

TEST_CASE("connector: residual_dim=0 reduces to the softmax main branch") {
  ExperimentConfig cfg;
  cfg.connector.residual_dim = 0;
  ParamStore ps;
  register_model(ps, cfg, false);
  init_model(ps, cfg);

  Rng rng(5);
  Tensor states(5, cfg.encoder.hidden_dim), logits(5, cfg.corpus.semantic_vocab);
  for (auto& x : states.v) x = rng.normal();
  for (auto& x : logits.v) x = rng.normal();
  ConnectorOutput out = connect(cfg, ps, states, logits);

  // Reference: softmax(logits) * table, computed independently.
  Tensor table = ps.tensor("backbone.embed.sem");
  for (int r = 0; r < 5; ++r) {
    std::vector<Real> p(logits.row(r), logits.row(r) + logits.cols);
    softmax_inplace(p.data(), logits.cols);
    for (int c = 0; c < cfg.connector.unit_dim; ++c) {
      Real want = 0.0;
      for (int v = 0; v < logits.cols; ++v) want += p[v] * table.at(v, c);
      CHECK(out.embeddings.at(r, c) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("connector: one-hot logits select the embedding-table row") {
  Fixture fx;
  const int j = 11;
  Tensor states(1, fx.cfg.encoder.hidden_dim);
  Tensor logits(1, fx.cfg.corpus.semantic_vocab);
  logits.at(0, j) = 1e4;
  ConnectorRun run;
  run.ablate_residual = true;
  ConnectorOutput out = connect(fx.cfg, fx.ps, states, logits, run);
  Tensor table = fx.ps.tensor("backbone.embed.sem");
  for (int c = 0; c < fx.cfg.connector.unit_dim; ++c)
    CHECK(out.embeddings.at(0, c) == doctest::Approx(table.at(j, c)).epsilon(1e-9));
}

TEST_CASE("connector: residual branch is dominated by the main branch at init") {
  Fixture fx;
  Rng rng(77);
  Tensor states(8, fx.cfg.encoder.hidden_dim), logits(8, fx.cfg.corpus.semantic_vocab);
  for (auto& x : states.v) x = rng.normal();
  for (auto& x : logits.v) x = rng.normal();

  ConnectorRun ablate;
  ablate.ablate_residual = true;
  Tensor main_only = connect(fx.cfg, fx.ps, states, logits, ablate).embeddings;
  Tensor with_res = connect(fx.cfg, fx.ps, states, logits).embeddings;
  for (int r = 0; r < 8; ++r) {
    double main_norm = 0.0, res_norm = 0.0;
    for (int c = 0; c < main_only.cols; ++c) {
      main_norm += main_only.at(r, c) * main_only.at(r, c);
      const double d = with_res.at(r, c) - main_only.at(r, c);
      res_norm += d * d;
    }
    CHECK(std::sqrt(res_norm) < std::sqrt(main_norm));
  }
}

TEST_CASE("connector: dimension mismatches are argument errors") {
  Fixture fx;
  Tensor states(3, fx.cfg.encoder.hidden_dim);
  Tensor bad_logits(3, fx.cfg.corpus.semantic_vocab + 1);
  CHECK_THROWS_AS(connect(fx.cfg, fx.ps, states, bad_logits), std::invalid_argument);
  Tensor bad_states(3, fx.cfg.encoder.hidden_dim - 1);
  Tensor logits(3, fx.cfg.corpus.semantic_vocab);
  CHECK_THROWS_AS(connect(fx.cfg, fx.ps, bad_states, logits), std::invalid_argument);
  Tensor mismatched(2, fx.cfg.encoder.hidden_dim);
  CHECK_THROWS_AS(connect(fx.cfg, fx.ps, mismatched, logits), std::invalid_argument);
}

TEST_CASE("connector: parameter accounting") {
  ExperimentConfig cfg;
  CHECK(connector_param_count(cfg) ==
        cfg.encoder.hidden_dim * cfg.connector.residual_dim +
            cfg.connector.residual_dim * cfg.connector.unit_dim);
  cfg.connector.reuse_backbone_table = false;
  CHECK(connector_param_count(cfg) ==
        cfg.encoder.hidden_dim * cfg.connector.residual_dim +
            cfg.connector.residual_dim * cfg.connector.unit_dim +
            cfg.corpus.semantic_vocab * cfg.connector.unit_dim);
}
