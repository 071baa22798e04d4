#include <doctest.h>

#include <cmath>

#include "svc/encoder.hpp"
#include "svc/trainer.hpp"

using namespace svc;

namespace {

struct Fixture {
  ExperimentConfig cfg;
  ParamStore ps;
  ToyCodec codec{CorpusConfig{}};
  std::vector<Utterance> corpus;

  Fixture() {
    cfg.corpus.num_utterances = 30;
    register_model(ps, cfg, false);
    init_model(ps, cfg);
    codec = ToyCodec(cfg.corpus);
    corpus = generate_corpus(cfg.corpus);
  }
};

AcousticTokens truncate_frames(const AcousticTokens& a, int frames) {
  AcousticTokens out(frames, a.quantizers);
  for (int f = 0; f < frames; ++f)
    for (int l = 0; l < a.quantizers; ++l) out.at(f, l) = a.at(f, l);
  return out;
}

}  // namespace

TEST_CASE("encoder: delayed output at step t only sees frames <= 2t+1+k") {
  Fixture fx;
  const int k = fx.cfg.encoder.delay_steps;
  const int shift = k / 2;
  Rng rng(2024);

  int cases = 0;
  for (const auto& u : fx.corpus) {
    SemanticHidden full = encode(fx.cfg, fx.ps, u.acoustic_tokens);
    const int tp = u.sem_frames();
    for (int rep = 0; rep < 8; ++rep) {
      const int t = rng.uniform_int(0, tp - 1 - shift);
      // Truncation at frame 2t+1+k keeps the delayed row for step t intact.
      SemanticHidden cut =
          encode(fx.cfg, fx.ps, truncate_frames(u.acoustic_tokens, 2 * t + 2 + k));
      for (int c = 0; c < full.states.cols; ++c)
        CHECK(cut.states.at(t + shift, c) == full.states.at(t + shift, c));

      // Perturbing any frame beyond 2t+1+k leaves the delayed row unchanged.
      if (2 * t + 2 + k < u.acoustic_tokens.frames) {
        AcousticTokens perturbed = u.acoustic_tokens;
        const int f = rng.uniform_int(2 * t + 2 + k, perturbed.frames - 1);
        const int l = rng.uniform_int(0, perturbed.quantizers - 1);
        perturbed.at(f, l) =
            (perturbed.at(f, l) + 1 + rng.uniform_int(0, 61)) % fx.cfg.corpus.codec_vocab;
        SemanticHidden moved = encode(fx.cfg, fx.ps, perturbed);
        for (int c = 0; c < full.states.cols; ++c)
          CHECK(moved.states.at(t + shift, c) == full.states.at(t + shift, c));
        ++cases;
      }
    }
    if (cases > 220) break;
  }
  CHECK(cases >= 200);
}

TEST_CASE("encoder: k=0 rows ignore any frame beyond 2t+1") {
  Fixture fx;
  fx.cfg.encoder.delay_steps = 0;
  const Utterance& u = fx.corpus[0];
  SemanticHidden full = encode(fx.cfg, fx.ps, u.acoustic_tokens);
  AcousticTokens perturbed = u.acoustic_tokens;
  const int t = 3;
  perturbed.at(2 * t + 2, 0) = (perturbed.at(2 * t + 2, 0) + 7) % 64;
  SemanticHidden moved = encode(fx.cfg, fx.ps, perturbed);
  for (int c = 0; c < full.states.cols; ++c)
    CHECK(moved.states.at(t, c) == full.states.at(t, c));
}

TEST_CASE("encoder: bidirectional mode breaks the causality invariant") {
  Fixture fx;
  const Utterance& u = fx.corpus[0];
  EncoderRun run;
  run.mode = AttentionMode::Bidirectional;
  SemanticHidden full = encode(fx.cfg, fx.ps, u.acoustic_tokens, run);
  AcousticTokens perturbed = u.acoustic_tokens;
  perturbed.at(perturbed.frames - 1, 0) = (perturbed.at(perturbed.frames - 1, 0) + 9) % 64;
  SemanticHidden moved = encode(fx.cfg, fx.ps, perturbed, run);
  bool any_changed = false;
  for (int c = 0; c < full.states.cols; ++c)
    any_changed = any_changed || moved.states.at(0, c) != full.states.at(0, c);
  CHECK(any_changed);
}

TEST_CASE("encoder: loss analytics") {
  // One-hot logits at large scale and exact projections give zero loss.
  const int tp = 6, v = 8, dsem = 4;
  SemanticTokens s;
  s.codes = {1, 3, 0, 7, 2, 5};
  ContinuousSemantic c;
  c.features = Tensor(tp, dsem);
  for (size_t i = 0; i < c.features.size(); ++i) c.features.v[i] = 0.3 * (i % 3) - 0.1;

  SemanticHidden h;
  h.delay_steps = 0;
  h.states = Tensor(tp, 16);
  h.logits = Tensor(tp, v);
  for (int t = 0; t < tp; ++t) h.logits.at(t, s.codes[t]) = 1e4;
  h.intermediate_states.push_back(c.features);

  LossReport r = encoder_loss(h, s, c);
  CHECK(r.l_s_ce == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(r.l_s_mse == 0.0);
  CHECK(r.total == r.l_s_ce + r.l_s_mse);

  // Uniform logits: CE is exactly ln(V).
  SemanticHidden hu = h;
  hu.logits = Tensor(tp, v);
  LossReport ru = encoder_loss(hu, s, c);
  CHECK(ru.l_s_ce == doctest::Approx(std::log(double(v))).epsilon(1e-12));

  // Length mismatch is an argument error.
  ContinuousSemantic bad;
  bad.features = Tensor(tp - 1, dsem);
  CHECK_THROWS_AS(encoder_loss(h, s, bad), std::invalid_argument);
}

TEST_CASE("encoder: input validation") {
  Fixture fx;
  AcousticTokens bad(4, fx.cfg.corpus.num_quantizers);
  bad.at(0, 0) = fx.cfg.corpus.codec_vocab;  // out of range
  CHECK_THROWS_AS(encode(fx.cfg, fx.ps, bad), std::invalid_argument);
  AcousticTokens tiny(0, fx.cfg.corpus.num_quantizers);
  CHECK_THROWS_AS(encode(fx.cfg, fx.ps, tiny), std::invalid_argument);
  AcousticTokens odd(5, fx.cfg.corpus.num_quantizers);
  CHECK_THROWS_AS(encode(fx.cfg, fx.ps, odd), std::invalid_argument);
}

TEST_CASE("encoder: delayed view covers every semantic step via padding") {
  Fixture fx;
  const Utterance& u = fx.corpus[1];
  DelayedEncoding d = encode_delayed(fx.cfg, fx.ps, u.acoustic_tokens);
  CHECK(d.states.rows == u.sem_frames());
  CHECK(d.logits.rows == u.sem_frames());
  // Row t equals raw row t + k/2 of the padded encode.
  SemanticHidden padded = encode(
      fx.cfg, fx.ps, pad_for_delay(u.acoustic_tokens, fx.cfg.encoder.delay_steps));
  const int shift = fx.cfg.encoder.delay_steps / 2;
  for (int t = 0; t < d.states.rows; ++t)
    for (int c = 0; c < d.states.cols; ++c)
      CHECK(d.states.at(t, c) == padded.states.at(t + shift, c));
}
