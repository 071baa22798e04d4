#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "svc/checkpoint.hpp"
#include "svc/trainer.hpp"

using namespace svc;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("checkpoint: save -> load -> save is byte-identical") {
  ExperimentConfig cfg;
  ParamStore ps;
  register_model(ps, cfg, /*with_dual=*/true);
  init_model(ps, cfg);

  const std::string p1 = "/tmp/svc_test_ckpt1.bin", p2 = "/tmp/svc_test_ckpt2.bin";
  const std::vector<std::string> groups = {"backbone", "encoder", "linear", "connector",
                                           "backbone-lora"};
  save_checkpoint(p1, ps, cfg, groups);

  ParamStore ps2;
  register_model(ps2, cfg, /*with_dual=*/true);
  load_checkpoint(p1, ps2, cfg, groups);
  save_checkpoint(p2, ps2, cfg, groups);
  CHECK(slurp(p1) == slurp(p2));

  for (const auto& g : groups) CHECK(ps.group_hash(g) == ps2.group_hash(g));
}

TEST_CASE("checkpoint: fingerprint mismatch is a version error") {
  ExperimentConfig cfg;
  ParamStore ps;
  register_model(ps, cfg, false);
  init_model(ps, cfg);
  const std::string path = "/tmp/svc_test_ckpt3.bin";
  save_checkpoint(path, ps, cfg, {"encoder", "linear"});

  ExperimentConfig other = cfg;
  other.encoder.delay_steps = 0;
  ParamStore ps2;
  register_model(ps2, other, false);
  CHECK_THROWS_AS(load_checkpoint(path, ps2, other, {"encoder"}), VersionError);
  CHECK(checkpoint_compatible(path, cfg, {"encoder"}));
  CHECK_FALSE(checkpoint_compatible(path, other, {"encoder"}));
  CHECK_FALSE(checkpoint_compatible(path, cfg, {"backbone"}));
}

TEST_CASE("checkpoint: mutated manifest shape is a version error") {
  ExperimentConfig cfg;
  ParamStore ps;
  register_model(ps, cfg, false);
  init_model(ps, cfg);
  const std::string path = "/tmp/svc_test_ckpt4.bin";
  save_checkpoint(path, ps, cfg, {"connector"});

  std::string data = slurp(path);
  const std::string needle = "\"rows\":16";  // connector.up is 16 x 64
  const size_t at = data.find(needle);
  REQUIRE(at != std::string::npos);
  data.replace(at, needle.size(), "\"rows\":17");
  {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(data.data(), static_cast<std::streamsize>(data.size()));
  }
  ParamStore ps2;
  register_model(ps2, cfg, false);
  CHECK_THROWS_AS(load_checkpoint(path, ps2, cfg, {"connector"}), VersionError);
}

TEST_CASE("checkpoint: group listing and missing-group error") {
  ExperimentConfig cfg;
  ParamStore ps;
  register_model(ps, cfg, false);
  init_model(ps, cfg);
  const std::string path = "/tmp/svc_test_ckpt5.bin";
  save_checkpoint(path, ps, cfg, {"backbone", "backbone-lora"});
  auto groups = checkpoint_groups(path);
  REQUIRE(groups.size() == 2);
  CHECK_THROWS_AS(load_checkpoint(path, ps, cfg, {"encoder"}), VersionError);
}
