#include <doctest.h>

#include "svc/backbone.hpp"
#include "svc/encoder.hpp"
#include "svc/trainer.hpp"
#include "test_util.hpp"

using namespace svc;

namespace {

// dim-8 configuration: every hidden size cut to the bone so central
// differences stay cheap.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.corpus.num_speakers = 4;
  cfg.corpus.train_speakers = 3;
  cfg.corpus.num_utterances = 4;
  cfg.corpus.min_frames = 6;
  cfg.corpus.max_frames = 8;
  cfg.corpus.d_sem = 8;
  cfg.encoder.num_layers = 2;
  cfg.encoder.num_heads = 2;
  cfg.encoder.hidden_dim = 8;
  cfg.encoder.intermediate_dim = 16;
  cfg.backbone.lm_layers = 2;
  cfg.backbone.lm_hidden = 8;
  cfg.backbone.lm_heads = 2;
  cfg.connector.unit_dim = 8;
  cfg.connector.residual_dim = 4;
  cfg.lora.rank = 2;
  cfg.train.min_prompt_frames = 2;
  cfg.train.min_source_frames = 2;
  cfg.validate();
  return cfg;
}

struct Tiny {
  ExperimentConfig cfg = tiny_config();
  ParamStore ps;
  std::vector<Utterance> corpus;
  Tiny() {
    register_model(ps, cfg, false);
    init_model(ps, cfg);
    // Give adapters nonzero B so their gradients are exercised too.
    Rng rng(4242);
    for (const auto& name : ps.names()) {
      if (name.find(".lora_b") == std::string::npos) continue;
      const ParamView& v = ps.view(name);
      Real* p = ps.data(v);
      for (size_t i = 0; i < v.size(); ++i) p[i] = 0.1 * rng.normal();
    }
    corpus = generate_corpus(cfg.corpus);
  }
};

}  // namespace

TEST_CASE("gradcheck: encoder loss terms (L_s_ce, L_s_mse)") {
  Tiny tiny;
  const Utterance& u = tiny.corpus[0];
  auto build_term = [&](bool ce_term) {
    return [&, ce_term](Graph& g) {
      EncoderGraphOut out = encoder_graph(
          g, tiny.cfg, pad_for_delay(u.acoustic_tokens, tiny.cfg.encoder.delay_steps));
      EncoderLossNodes nodes =
          encoder_loss_graph(g, tiny.cfg, out, u.semantic_tokens, u.continuous_semantic,
                             tiny.cfg.encoder.delay_steps);
      return ce_term ? nodes.ce : nodes.mse;
    };
  };
  auto ce = testutil::finite_diff_check(tiny.ps, build_term(true), 2, 11);
  CHECK(ce.max_rel < 1e-3);
  auto mse = testutil::finite_diff_check(tiny.ps, build_term(false), 2, 12);
  CHECK(mse.max_rel < 1e-3);
}

TEST_CASE("gradcheck: backbone loss terms (L_s_ce, L_a_ce, L_TF) through the full e2e path") {
  Tiny tiny;
  const Utterance& u = tiny.corpus[1];
  const int split = 3;
  const int tp = u.sem_frames();
  const int shift = tiny.cfg.encoder.delay_steps / 2;

  auto build = [&](int term) {
    return [&, term](Graph& g) {
      // End-to-end: encoder -> connector -> backbone with adapters, so the
      // checks cover every trainable tensor of the fine-tuning stage.
      AcousticTokens prompt_ac(2 * split, tiny.cfg.corpus.num_quantizers);
      for (int f = 0; f < prompt_ac.frames; ++f)
        for (int l = 0; l < prompt_ac.quantizers; ++l)
          prompt_ac.at(f, l) = u.acoustic_tokens.at(f, l);
      AcousticTokens source_ac(2 * (tp - split), tiny.cfg.corpus.num_quantizers);
      for (int f = 0; f < source_ac.frames; ++f)
        for (int l = 0; l < source_ac.quantizers; ++l)
          source_ac.at(f, l) = u.acoustic_tokens.at(2 * split + f, l);

      EncoderGraphOut enc_p = encoder_graph(
          g, tiny.cfg, pad_for_delay(prompt_ac, tiny.cfg.encoder.delay_steps));
      std::vector<int> pidx(split);
      for (int t = 0; t < split; ++t) pidx[t] = t + shift;
      int prompt_rows = connector_graph(g, tiny.cfg, g.gather_rows(enc_p.states, pidx),
                                        g.gather_rows(enc_p.logits, pidx), ConnectorRun{});

      EncoderGraphOut enc_s = encoder_graph(
          g, tiny.cfg, pad_for_delay(u.acoustic_tokens, tiny.cfg.encoder.delay_steps));
      std::vector<int> sidx(tp - split);
      for (int t = split; t < tp; ++t) sidx[t - split] = t + shift;
      int source_rows = connector_graph(g, tiny.cfg, g.gather_rows(enc_s.states, sidx),
                                        g.gather_rows(enc_s.logits, sidx), ConnectorRun{});

      InterleavedSequence seq = build_sequence(
          tiny.cfg, SemSide::embedded(g.value(prompt_rows)), prompt_ac,
          SemSide::embedded(g.value(source_rows)), source_ac);
      seq.sem_masked[1] = 1;  // exercise the mask-embedding path too
      SequenceNodes overrides{prompt_rows, source_rows};
      BackboneRun run;
      run.use_lora = true;
      BackboneGraphOut out =
          backbone_forward_graph(g, tiny.cfg, seq, run, -1, true, &overrides);
      BackboneTargets targets;
      targets.semantic = u.semantic_tokens.codes;
      targets.teacher = u.continuous_semantic.features;
      BackboneLossNodes nodes = backbone_loss_graph(g, tiny.cfg, out, seq, targets);
      switch (term) {
        case 0: return nodes.s_ce;
        case 1: return nodes.a_ce;
        case 2: return nodes.tf;
        default: return nodes.total;
      }
    };
  };

  for (int term = 0; term < 3; ++term) {
    auto res = testutil::finite_diff_check(tiny.ps, build(term), 1, 100 + term);
    INFO("term ", term, " max_rel ", res.max_rel);
    CHECK(res.max_rel < 1e-3);
  }
}
