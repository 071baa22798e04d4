#include <doctest.h>

#include <cmath>

#include "svc/stream.hpp"
#include "svc/trainer.hpp"

using namespace svc;

namespace {

struct Fixture {
  ExperimentConfig cfg;
  ParamStore ps;
  std::vector<Utterance> corpus;

  Fixture() {
    cfg.corpus.num_utterances = 16;
    cfg.corpus.num_speakers = 6;
    cfg.corpus.train_speakers = 4;
    cfg.encoder.num_layers = 1;
    cfg.encoder.hidden_dim = 32;
    cfg.encoder.intermediate_dim = 64;
    cfg.encoder.num_heads = 2;
    cfg.backbone.lm_layers = 1;
    cfg.backbone.lm_hidden = 32;
    cfg.backbone.lm_heads = 2;
    cfg.connector.unit_dim = 32;
    cfg.validate();
    register_model(ps, cfg, true);
    init_model(ps, cfg);
    corpus = generate_corpus(cfg.corpus);
  }

  AcousticTokens batch_convert(const AcousticTokens& prompt, const AcousticTokens& source) {
    ConnectorOutput prompt_rows = semantic_stream(cfg, ps, prompt, false);
    ConnectorOutput source_rows = semantic_stream(cfg, ps, source, false);
    BackboneRun run;
    run.use_lora = true;
    return backbone_generate(cfg, ps, SemSide::embedded(prompt_rows.embeddings), prompt,
                             SemSide::embedded(source_rows.embeddings), run);
  }

  AcousticTokens prompt_of(const Utterance& u) const {
    const int p = std::min(cfg.stream.prompt_frames, u.sem_frames());
    AcousticTokens out(2 * p, cfg.corpus.num_quantizers);
    for (int f = 0; f < out.frames; ++f)
      for (int l = 0; l < out.quantizers; ++l) out.at(f, l) = u.acoustic_tokens.at(f, l);
    return out;
  }
};

AcousticTokens concat_tokens(const AcousticTokens& a, const AcousticTokens& b) {
  AcousticTokens out(a.frames + b.frames, a.quantizers);
  std::copy(a.codes.begin(), a.codes.end(), out.codes.begin());
  std::copy(b.codes.begin(), b.codes.end(), out.codes.begin() + a.codes.size());
  return out;
}

AcousticTokens slice_tokens(const AcousticTokens& a, int f0, int f1) {
  AcousticTokens out(f1 - f0, a.quantizers);
  for (int f = f0; f < f1; ++f)
    for (int l = 0; l < a.quantizers; ++l) out.at(f - f0, l) = a.at(f, l);
  return out;
}


// feed_chunk and close must be sequenced explicitly (function-argument
// evaluation order is unspecified).
AcousticTokens feed_then_close(StreamSession& s, const AcousticTokens& src) {
  AcousticTokens head = s.feed_chunk(src);
  AcousticTokens tail = s.close();
  return concat_tokens(head, tail);
}

}  // namespace

TEST_CASE("latency: the pipeline formula is applied exactly") {
  LatencyReport r = latency_report(80, 20, 0.58, 0.004);
  CHECK(r.total_ms == doctest::Approx(80 + 20 + 20 * (0.58 + 0.004)).epsilon(1e-12));
  CHECK(std::abs(r.total_ms - (r.delay_ms + r.token_ms +
                               r.token_ms * (r.rtf_model + r.rtf_codec))) < 1e-9);

  CHECK(latency_report(0, 20, 0, 0).total_ms == doctest::Approx(20.0));
  CHECK(latency_report(40, 20, 0.58, 0.004).total_ms ==
        doctest::Approx(40 + 20 + 20 * (0.58 + 0.004)).epsilon(1e-12));
  CHECK_THROWS_AS(latency_report(-1, 20, 0, 0), std::invalid_argument);
  CHECK_THROWS_AS(latency_report(0, 20, -0.1, 0), std::invalid_argument);
}

TEST_CASE("stream: open then immediately close emits nothing") {
  Fixture fx;
  StreamSession s(fx.cfg, fx.ps, fx.prompt_of(fx.corpus[0]), SessionMode::Stream);
  AcousticTokens out = s.close();
  CHECK(out.frames == 0);
  CHECK(s.emitted_frames() == 0);
  CHECK(s.closed());
}

TEST_CASE("stream: state machine errors") {
  Fixture fx;
  StreamSession s(fx.cfg, fx.ps, fx.prompt_of(fx.corpus[0]), SessionMode::Stream);
  CHECK_THROWS_AS(s.run_batch(fx.corpus[1].acoustic_tokens), StateError);
  s.close();
  CHECK_THROWS_AS(s.feed_chunk(slice_tokens(fx.corpus[1].acoustic_tokens, 0, 2)),
                  StateError);
  CHECK_THROWS_AS(s.close(), StateError);

  StreamSession ns(fx.cfg, fx.ps, fx.prompt_of(fx.corpus[0]), SessionMode::NonStream);
  CHECK_THROWS_AS(ns.feed_chunk(slice_tokens(fx.corpus[1].acoustic_tokens, 0, 2)),
                  StateError);
}

TEST_CASE("stream: emission starts only after k+2 frames") {
  Fixture fx;
  const int k = fx.cfg.encoder.delay_steps;
  StreamSession s(fx.cfg, fx.ps, fx.prompt_of(fx.corpus[0]), SessionMode::Stream);
  const AcousticTokens& src = fx.corpus[1].acoustic_tokens;
  AcousticTokens got(0, src.quantizers);
  for (int f = 0; f < k + 1; ++f) {
    AcousticTokens one = slice_tokens(src, f, f + 1);
    AcousticTokens out = s.feed_chunk(one);
    CHECK(out.frames == 0);  // nothing before k+2 frames
  }
  AcousticTokens out = s.feed_chunk(slice_tokens(src, k + 1, k + 2));
  CHECK(out.frames == 2);  // frames 0 and 1 become available together
}

TEST_CASE("stream: chunk-size invariance (bit-exact under greedy)") {
  Fixture fx;
  const Utterance& prompt_u = fx.corpus[0];
  const Utterance& src_u = fx.corpus[2];
  const AcousticTokens prompt = fx.prompt_of(prompt_u);
  const AcousticTokens& src = src_u.acoustic_tokens;

  // All at once.
  StreamSession all(fx.cfg, fx.ps, prompt, SessionMode::Stream);
  AcousticTokens out_all = feed_then_close(all, src);

  // One frame at a time.
  StreamSession one(fx.cfg, fx.ps, prompt, SessionMode::Stream);
  AcousticTokens out_one(0, src.quantizers);
  for (int f = 0; f < src.frames; ++f)
    out_one = concat_tokens(out_one, one.feed_chunk(slice_tokens(src, f, f + 1)));
  out_one = concat_tokens(out_one, one.close());

  CHECK(out_all.frames == src.frames);
  CHECK(out_one.codes == out_all.codes);

  // Random chunk sizes over a longer stream.
  AcousticTokens big = concat_tokens(src, fx.corpus[3].acoustic_tokens);
  if (big.frames > 64) big = slice_tokens(big, 0, 64);
  StreamSession ra(fx.cfg, fx.ps, prompt, SessionMode::Stream);
  AcousticTokens out_ra(0, src.quantizers);
  Rng rng(5150);
  int fed = 0;
  while (fed < big.frames) {
    const int n = std::min(big.frames - fed, rng.uniform_int(1, 7));
    out_ra = concat_tokens(out_ra, ra.feed_chunk(slice_tokens(big, fed, fed + n)));
    fed += n;
  }
  out_ra = concat_tokens(out_ra, ra.close());

  StreamSession sz1(fx.cfg, fx.ps, prompt, SessionMode::Stream);
  AcousticTokens out_sz1(0, src.quantizers);
  for (int f = 0; f < big.frames; ++f)
    out_sz1 = concat_tokens(out_sz1, sz1.feed_chunk(slice_tokens(big, f, f + 1)));
  out_sz1 = concat_tokens(out_sz1, sz1.close());
  CHECK(out_ra.codes == out_sz1.codes);
}

TEST_CASE("stream: flush emits the delay-buffered tail") {
  Fixture fx;
  const int k = fx.cfg.encoder.delay_steps;
  REQUIRE(k >= 2);
  StreamSession s(fx.cfg, fx.ps, fx.prompt_of(fx.corpus[0]), SessionMode::Stream);
  // Feed fewer than k frames, then close: everything must still come out.
  AcousticTokens part = slice_tokens(fx.corpus[4].acoustic_tokens, 0, k - 1);
  AcousticTokens out = s.feed_chunk(part);
  CHECK(out.frames == 0);
  AcousticTokens tail = s.close();
  CHECK(tail.frames == k - 1);
  CHECK(s.emitted_frames() == k - 1);
}

TEST_CASE("stream: incremental session equals batched generation") {
  Fixture fx;
  int checked = 0;
  for (int i = 0; i < 4; ++i) {
    const Utterance& prompt_u = fx.corpus[i];
    const Utterance& src_u = fx.corpus[(i + 5) % fx.corpus.size()];
    const AcousticTokens prompt = fx.prompt_of(prompt_u);
    AcousticTokens batch = fx.batch_convert(prompt, src_u.acoustic_tokens);

    StreamSession s(fx.cfg, fx.ps, prompt, SessionMode::Stream);
    AcousticTokens streamed = feed_then_close(s, src_u.acoustic_tokens);
    CHECK(streamed.codes == batch.codes);
    ++checked;
  }
  CHECK(checked == 4);
}

TEST_CASE("stream: sessions over shared parameters are independent") {
  Fixture fx;
  const AcousticTokens prompt = fx.prompt_of(fx.corpus[0]);
  const AcousticTokens& src_a = fx.corpus[6].acoustic_tokens;
  const AcousticTokens& src_b = fx.corpus[7].acoustic_tokens;

  StreamSession solo_a(fx.cfg, fx.ps, prompt, SessionMode::Stream);
  AcousticTokens ref_a = feed_then_close(solo_a, src_a);
  StreamSession solo_b(fx.cfg, fx.ps, prompt, SessionMode::Stream);
  AcousticTokens ref_b = feed_then_close(solo_b, src_b);

  // Interleaved feeding of two concurrent sessions.
  StreamSession sa(fx.cfg, fx.ps, prompt, SessionMode::Stream);
  StreamSession sb(fx.cfg, fx.ps, prompt, SessionMode::Stream);
  AcousticTokens out_a(0, src_a.quantizers), out_b(0, src_b.quantizers);
  const int n = std::min(src_a.frames, src_b.frames);
  for (int f = 0; f < n; f += 2) {
    out_a = concat_tokens(out_a, sa.feed_chunk(slice_tokens(src_a, f, f + 2)));
    out_b = concat_tokens(out_b, sb.feed_chunk(slice_tokens(src_b, f, f + 2)));
  }
  out_a = concat_tokens(out_a, sa.feed_chunk(slice_tokens(src_a, n, src_a.frames)));
  out_b = concat_tokens(out_b, sb.feed_chunk(slice_tokens(src_b, n, src_b.frames)));
  out_a = concat_tokens(out_a, sa.close());
  out_b = concat_tokens(out_b, sb.close());
  CHECK(out_a.codes == ref_a.codes);
  CHECK(out_b.codes == ref_b.codes);
}

TEST_CASE("stream: latency ledger satisfies the formula law") {
  Fixture fx;
  StreamSession s(fx.cfg, fx.ps, fx.prompt_of(fx.corpus[0]), SessionMode::Stream);
  s.feed_chunk(fx.corpus[8].acoustic_tokens);
  s.close();
  LatencyReport r = s.latency();
  CHECK(r.delay_ms == fx.cfg.encoder.delay_steps * 20.0);
  CHECK(r.token_ms == 20.0);
  CHECK(r.rtf_model > 0.0);
  CHECK(r.rtf_codec == fx.cfg.stream.rtf_codec);
  CHECK(std::abs(r.total_ms - (r.delay_ms + r.token_ms +
                               r.token_ms * (r.rtf_model + r.rtf_codec))) < 1e-9);
}

TEST_CASE("stream: token-stream framing round-trips") {
  Fixture fx;
  std::vector<AcousticTokens> chunks;
  chunks.push_back(slice_tokens(fx.corpus[0].acoustic_tokens, 0, 3));
  chunks.push_back(slice_tokens(fx.corpus[0].acoustic_tokens, 3, 8));
  chunks.push_back(AcousticTokens(0, 4));
  const std::string path = "/tmp/svc_test_stream.bin";
  write_token_stream(path, chunks);
  auto loaded = read_token_stream(path, 4);
  REQUIRE(loaded.size() == 3);
  for (size_t i = 0; i < chunks.size(); ++i) {
    CHECK(loaded[i].frames == chunks[i].frames);
    CHECK(loaded[i].codes == chunks[i].codes);
  }
}
