#include <doctest.h>

#include "svc/config.hpp"

using namespace svc;

TEST_CASE("config: default template parses back to defaults") {
  ExperimentConfig parsed = parse_config_text(default_config_text());
  ExperimentConfig defaults;
  CHECK(parsed.canonical() == defaults.canonical());
}

TEST_CASE("config: unknown keys and sections are rejected with line numbers") {
  const std::string bad_key = "[corpus]\nseed = 1\nbogus_key = 3\n";
  try {
    parse_config_text(bad_key);
    FAIL("expected parse error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
    CHECK(std::string(e.what()).find("bogus_key") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("[nope]\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("key_outside = 1\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_config_text("[lora]\nrank = abc\n"), std::invalid_argument);
}

TEST_CASE("config: validation rejects inconsistent settings") {
  ExperimentConfig cfg;
  cfg.encoder.delay_steps = 3;  // not a multiple of the frame-rate ratio
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ExperimentConfig{};
  cfg.connector.unit_dim = 32;  // must match lm_hidden
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = ExperimentConfig{};
  cfg.backbone.lm_heads = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("config: group fingerprints track only their own sections") {
  ExperimentConfig a;
  ExperimentConfig b;
  b.encoder.delay_steps = 0;
  // Backbone checkpoints stay reusable across encoder delay ablations...
  CHECK(a.group_fingerprint("backbone") == b.group_fingerprint("backbone"));
  // ...but encoder checkpoints do not.
  CHECK(a.group_fingerprint("encoder") != b.group_fingerprint("encoder"));

  ExperimentConfig c;
  c.connector.residual_dim = 0;
  CHECK(a.group_fingerprint("connector") != c.group_fingerprint("connector"));
  CHECK(a.group_fingerprint("backbone") == c.group_fingerprint("backbone"));

  ExperimentConfig d;
  d.train.seed = 777;  // training knobs do not invalidate checkpoints
  CHECK(a.group_fingerprint("backbone") == d.group_fingerprint("backbone"));
  CHECK_THROWS_AS(a.group_fingerprint("nonsense"), std::invalid_argument);
}
