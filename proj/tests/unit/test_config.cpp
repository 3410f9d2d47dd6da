#include <doctest.h>

#include "rmt/config.hpp"
#include "rmt/errors.hpp"

using namespace rmt;

TEST_CASE("defaults resolve to the library defaults") {
  const Config c;
  const RunConfig r = run_config(c);
  const RunConfig d;
  CHECK(r.policy == d.policy);
  CHECK(r.leak == d.leak);
  CHECK(r.lr == d.lr);
  CHECK(r.lr_scale == d.lr_scale);
  CHECK(r.epochs == d.epochs);
  CHECK(r.mask.init == 1e-2);
  CHECK(r.mask.alpha == 5e-3);
  CHECK(r.seeds.gate == RunSeeds::from(0).gate);

  const SyntheticConfig s = synthetic_config(c);
  CHECK(s.rotation_angle == SyntheticConfig{}.rotation_angle);
  CHECK(s.sigma_shift == SyntheticConfig{}.sigma_shift);
  CHECK(model_config(c).classes == s.base_classes);
}

TEST_CASE("unknown keys and malformed values are rejected") {
  Config c;
  CHECK_THROWS_AS(c.set("run.learning_rate", "0.1"), ConfigError);
  CHECK_THROWS_AS(c.set("run.epochs", "-3"), ConfigError);
  CHECK_THROWS_AS(c.set("run.lr", "fast"), ConfigError);
  CHECK_THROWS_AS(c.set("run.lr", "nan"), ConfigError);
  CHECK_THROWS_AS(c.set("run.policy", "xmt"), ConfigError);
  CHECK_THROWS_AS(c.set("run.regularized", "maybe"), ConfigError);
  CHECK_THROWS_AS(c.set_assignment("run.lr"), ConfigError);
  try {
    c.merge_text("# comment\n\nrun.epochs = 4\nbogus = 1\n", "cfg.txt");
    FAIL("unknown key accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).rfind("cfg.txt:4:", 0) == 0);
  }
  c.set("run.leak", "1.5");
  CHECK_THROWS_AS(run_config(c), ConfigError);
}

TEST_CASE("the echo parses back into an equal config") {
  Config c;
  c.set("run.policy", "pmt");
  c.set("run.regularized", "yes");
  c.set("run.leak", "1.0");
  c.set("run.lr", "0.00008");
  c.set("run.seeds.gate", "77");
  c.set("gen.sigma_shift", "0.25");
  Config back;
  back.merge_text(c.to_text());
  CHECK(back == c);
  CHECK(back.to_text() == c.to_text());
  CHECK(c.get("run.regularized") == "true");
  CHECK(c.get("run.leak") == "1");
  CHECK(c.get("run.lr") == "8e-05");
  CHECK(run_config(back).seeds.gate == 77);
}

TEST_CASE("later assignments override earlier ones") {
  Config c;
  c.merge_text("run.epochs = 4\nrun.epochs = 6\n");
  CHECK(c.integer("run.epochs") == 6);
  c.set_assignment("run.epochs=9");
  CHECK(c.integer("run.epochs") == 9);
  CHECK(run_config(c).epochs == 9);
}

TEST_CASE("numbers print in their shortest round-trip form") {
  CHECK(format_number(0.3) == "0.3");
  CHECK(format_number(1.0) == "1");
  CHECK(format_number(8e-5) == "8e-05");
}

TEST_CASE("md5 digests") {
  CHECK(md5_hex("") == "d41d8cd98f00b204e9800998ecf8427e");
  CHECK(md5_hex("abc") == "900150983cd24fb0d6963f7d28e17f72");
  CHECK(md5_hex("The quick brown fox jumps over the lazy dog") == "9e107d9d372bb6826bd81d3542a419d6");
}
