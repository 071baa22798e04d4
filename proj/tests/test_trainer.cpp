#include <doctest.h>

#include <cmath>

#include "svc/checkpoint.hpp"
#include "svc/trainer.hpp"

using namespace svc;

namespace {

// Small-but-real configuration for fast training tests.
ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.corpus.num_speakers = 4;
  cfg.corpus.train_speakers = 3;
  cfg.corpus.num_utterances = 8;
  cfg.corpus.min_frames = 8;
  cfg.corpus.max_frames = 10;
  cfg.encoder.num_layers = 1;
  cfg.encoder.hidden_dim = 32;
  cfg.encoder.intermediate_dim = 64;
  cfg.encoder.num_heads = 2;
  cfg.backbone.lm_layers = 1;
  cfg.backbone.lm_hidden = 32;
  cfg.backbone.lm_heads = 2;
  cfg.connector.unit_dim = 32;
  cfg.lora.rank = 4;
  cfg.train.min_prompt_frames = 3;
  cfg.train.min_source_frames = 3;
  cfg.train.batch_size = 4;
  cfg.validate();
  return cfg;
}

}  // namespace

TEST_CASE("trainer: plan validation") {
  TrainPlan plan;
  plan.stage = Stage::PretrainBackbone;
  plan.self_refine_prob = 0.5;
  plan.steps = 1;
  CHECK_THROWS_AS(plan.validate(), std::invalid_argument);
  plan.stage = Stage::Finetune;
  CHECK_NOTHROW(plan.validate());
}

TEST_CASE("trainer: losses drop on a fixed tiny batch (overfit sanity)") {
  ExperimentConfig cfg = small_config();
  cfg.corpus.num_utterances = 1;  // train pool collapses to one utterance
  ParamStore ps;
  register_model(ps, cfg, false);
  init_model(ps, cfg);
  auto corpus = generate_corpus(cfg.corpus);

  TrainPlan plan = plan_for(cfg, Stage::PretrainBackbone);
  plan.steps = 50;
  plan.learning_rate = 2e-3;
  std::vector<double> totals;
  pretrain_backbone(ps, cfg, corpus, plan,
                    [&](const TrainLogEntry& e) { totals.push_back(e.loss.total); });
  REQUIRE(totals.size() == 50);
  CHECK(totals.back() < totals.front());

  // Encoder CE decreases monotonically over the first 50 steps: the encoder
  // batch really is fixed (no split or mask randomness on this stage).
  TrainPlan eplan = plan_for(cfg, Stage::PretrainEncoder);
  eplan.steps = 50;
  eplan.learning_rate = 5e-4;
  std::vector<double> ces;
  pretrain_encoder(ps, cfg, corpus, eplan,
                   [&](const TrainLogEntry& e) { ces.push_back(e.loss.l_s_ce); });
  REQUIRE(ces.size() == 50);
  for (size_t i = 1; i < ces.size(); ++i) CHECK(ces[i] < ces[i - 1]);
}

TEST_CASE("trainer: identical seeds give bit-identical checkpoints") {
  ExperimentConfig cfg = small_config();
  auto corpus = generate_corpus(cfg.corpus);

  auto run = [&]() {
    ParamStore ps;
    register_model(ps, cfg, false);
    init_model(ps, cfg);
    TrainPlan plan = plan_for(cfg, Stage::PretrainBackbone);
    plan.steps = 8;
    pretrain_backbone(ps, cfg, corpus, plan);
    TrainPlan eplan = plan_for(cfg, Stage::PretrainEncoder);
    eplan.steps = 8;
    pretrain_encoder(ps, cfg, corpus, eplan);
    return group_hashes(ps);
  };
  auto h1 = run();
  auto h2 = run();
  CHECK(h1 == h2);
}

TEST_CASE("trainer: loss report total equals the sum of active terms") {
  ExperimentConfig cfg = small_config();
  ParamStore ps;
  register_model(ps, cfg, false);
  init_model(ps, cfg);
  auto corpus = generate_corpus(cfg.corpus);
  TrainPlan plan = plan_for(cfg, Stage::PretrainBackbone);
  plan.steps = 3;
  pretrain_backbone(ps, cfg, corpus, plan, [&](const TrainLogEntry& e) {
    CHECK(e.loss.total ==
          e.loss.l_s_ce + e.loss.l_a_ce + e.loss.l_tf + e.loss.l_s_mse);
    CHECK(e.loss.l_s_ce >= 0.0);
    CHECK(e.loss.l_a_ce >= 0.0);
    CHECK(e.loss.l_tf >= 0.0);
  });
}

TEST_CASE("trainer: refinement pairs honor their contracts") {
  ExperimentConfig cfg = small_config();
  ParamStore ps;
  register_model(ps, cfg, false);
  init_model(ps, cfg);
  auto corpus = generate_corpus(cfg.corpus);

  auto pairs = build_refinement_pairs(cfg, ps, corpus, 6, 123);
  CHECK(pairs.size() == 6);
  for (const auto& pr : pairs) {
    const Utterance& src = corpus[pr.source_index];
    CHECK(pr.target_speaker != src.speaker.speaker_id);
    CHECK(pr.target_speaker < cfg.corpus.train_speakers);
    CHECK(pr.synthetic.semantic_tokens.codes == src.semantic_tokens.codes);
    CHECK(pr.synthetic.acoustic_tokens.frames == src.acoustic_tokens.frames);
    CHECK(pr.synthetic.speaker.speaker_id == pr.target_speaker);
  }
  // Deterministic under the same seed.
  auto again = build_refinement_pairs(cfg, ps, corpus, 6, 123);
  for (size_t i = 0; i < pairs.size(); ++i) {
    CHECK(again[i].source_index == pairs[i].source_index);
    CHECK(again[i].synthetic.acoustic_tokens.codes ==
          pairs[i].synthetic.acoustic_tokens.codes);
  }
}

TEST_CASE("trainer: fine-tuning freezes everything but its trainable set") {
  ExperimentConfig cfg = small_config();
  ParamStore ps;
  register_model(ps, cfg, false);
  init_model(ps, cfg);
  auto corpus = generate_corpus(cfg.corpus);
  auto pairs = build_refinement_pairs(cfg, ps, corpus, 3, 9);

  auto before = group_hashes(ps);
  TrainPlan plan = plan_for(cfg, Stage::Finetune);
  plan.steps = 6;
  finetune(ps, cfg, corpus, pairs, plan);
  auto after = group_hashes(ps);

  CHECK(after.at("backbone") == before.at("backbone"));
  CHECK(after.at("encoder") == before.at("encoder"));
  CHECK(after.at("connector") != before.at("connector"));
  CHECK(after.at("backbone-lora") != before.at("backbone-lora"));
  CHECK(after.at("linear") != before.at("linear"));
}

TEST_CASE("trainer: dual-mode extension leaves the streaming path bit-exact") {
  ExperimentConfig cfg = small_config();
  cfg.train.dual_encoder_steps = 4;
  cfg.train.dual_finetune_steps = 4;
  ParamStore ps;
  register_model(ps, cfg, true);
  init_model(ps, cfg);
  auto corpus = generate_corpus(cfg.corpus);

  // A streaming-path output probe before/after the extension.
  const Utterance& u = corpus[0];
  auto convert = [&]() {
    ConnectorOutput prompt = semantic_stream(cfg, ps, u.acoustic_tokens, false);
    BackboneRun run;
    run.use_lora = true;
    return backbone_generate(cfg, ps, SemSide::embedded(prompt.embeddings),
                             u.acoustic_tokens, SemSide::embedded(prompt.embeddings), run);
  };
  AcousticTokens before_out = convert();
  auto before = group_hashes(ps);

  extend_dual_mode(ps, cfg, corpus);
  auto after = group_hashes(ps);

  for (const char* g : {"backbone", "encoder", "linear", "connector", "backbone-lora"})
    CHECK(after.at(g) == before.at(g));
  CHECK(after.at("encoder-lora") != before.at("encoder-lora"));
  CHECK(after.at("linear2") != before.at("linear2"));
  CHECK(after.at("connector2") != before.at("connector2"));
  CHECK(after.at("backbone-lora2") != before.at("backbone-lora2"));

  AcousticTokens after_out = convert();
  CHECK(after_out.codes == before_out.codes);

  // extend_dual_mode without registered dual groups is an argument error.
  ParamStore plain;
  register_model(plain, cfg, false);
  init_model(plain, cfg);
  CHECK_THROWS_AS(extend_dual_mode(plain, cfg, corpus), std::invalid_argument);
}
