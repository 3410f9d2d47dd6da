#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "rmt/errors.hpp"
#include "rmt/masking.hpp"
#include "rmt/ops.hpp"
#include "support.hpp"

using namespace rmt;

namespace {

Tensor random_bits(const Shape& shape, std::mt19937_64& rng, double p_one = 0.7) {
  std::bernoulli_distribution b(p_one);
  Tensor t(shape);
  for (double& v : t.data()) v = b(rng) ? 1.0 : 0.0;
  return t;
}

// Artifact with one layer whose zeros sit at the given flat positions.
MaskArtifact zeros_at(const std::set<std::size_t>& zeros, std::size_t n = 8) {
  Tensor bits({1, n}, 1.0);
  for (std::size_t z : zeros) bits[z] = 0.0;
  MaskArtifact a;
  a.policy = "amt";
  a.layers.push_back(MaskRecord::from_binary("l", bits, 5e-3, Granularity::parameter));
  return a;
}

}  // namespace

TEST_CASE("binarize thresholds strictly") {
  const Tensor b = binarize(Tensor::vector({0.010, 0.004, 0.0051}), 0.005);
  CHECK(b[0] == 1.0);
  CHECK(b[1] == 0.0);
  CHECK(b[2] == 1.0);
  CHECK(binarize(Tensor::vector({0.005}), 0.005)[0] == 0.0);

  MaskedLinear fresh(Tensor({3, 4}, 1.0), Tensor({3}));
  CHECK(fresh.settings().init == 1e-2);
  CHECK(fresh.alpha() == 5e-3);
  for (double v : fresh.binary_mask().data()) CHECK(v == 1.0);
}

TEST_CASE("channel granularities decide on the group mean") {
  const Tensor m = Tensor::matrix({{0.010, 0.000, 0.009}, {0.001, 0.002, 0.001}});
  const Tensor rows = binarize(m, 0.005, Granularity::output_channel);
  CHECK(rows.identical(Tensor::matrix({{1, 1, 1}, {0, 0, 0}})));
  const Tensor cols = binarize(m, 0.005, Granularity::input_channel);
  CHECK(cols.identical(Tensor::matrix({{1, 0, 0}, {1, 0, 0}})));
  CHECK(parse_granularity("input_channel") == Granularity::input_channel);
  CHECK_THROWS_AS(parse_granularity("block"), ConfigError);
}

TEST_CASE("apply_mask examples") {
  MaskedLinear layer(Tensor::matrix({{2, -3}, {4, 5}}), Tensor::vector({0, 0}));
  layer.set_enabled(true);
  layer.load_binary_mask(Tensor::matrix({{1, 0}, {1, 1}}));
  const Tensor y = apply_mask(layer, Tensor::vector({1, 1}));
  CHECK(y[0] == 2.0);
  CHECK(y[1] == 9.0);

  MaskedLinear biased(Tensor::matrix({{2, -3}, {4, 5}}), Tensor::vector({0.5, -1.5}));
  biased.set_enabled(true);
  std::mt19937_64 rng(1);
  const Tensor x = test::random_tensor({3, 2}, rng);
  MaskedLinear plain = biased;
  plain.set_enabled(false);
  CHECK(apply_mask(biased, x).identical(apply_mask(plain, x)));

  biased.load_binary_mask(Tensor({2, 2}, 0.0));
  const Tensor z = apply_mask(biased, x);
  for (std::size_t r = 0; r < 3; ++r) {
    CHECK(z(r, 0) == 0.5);
    CHECK(z(r, 1) == -1.5);
  }
}

TEST_CASE("load_binary_mask keeps M and M_bin consistent") {
  MaskedLinear layer(Tensor({2, 3}, 1.0), Tensor({2}));
  const Tensor bits = Tensor::matrix({{1, 0, 1}, {0, 0, 1}});
  layer.load_binary_mask(bits);
  CHECK(layer.binary_mask().identical(bits));
  layer.rebinarize();
  CHECK(layer.binary_mask().identical(bits));
}

TEST_CASE("straight-through gradient examples") {
  MaskedLinear layer(Tensor::matrix({{3, -4}}), Tensor::vector({0}));
  const Tensor g = ste_gradient(layer, Tensor::matrix({{1, 2}}));
  CHECK(g[0] == 3.0);
  CHECK(g[1] == -8.0);
  CHECK_THROWS_AS(ste_gradient(layer, Tensor()), StateError);

  MaskedLinear zero(Tensor::matrix({{0, 1}}), Tensor::vector({0}));
  CHECK(ste_gradient(zero, Tensor::matrix({{123.0, 1.0}}))[0] == 0.0);
}

TEST_CASE("straight-through gradient is theta times the masked-weight gradient") {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const Shape s{dim(rng), dim(rng)};
    MaskedLinear layer(test::random_tensor(s, rng), test::random_tensor({s[0]}, rng));
    layer.set_enabled(true);
    layer.load_binary_mask(random_bits(s, rng));
    const Tensor x = test::random_tensor({3, s[1]}, rng);
    const Tensor w = test::random_tensor({3, s[0]}, rng);

    Tape tape;
    const MaskedLinearTrace tr = masked_linear(tape, tape.constant(x), layer, true);
    REQUIRE(tr.masked_weight.valid());
    tape.backward(sum(tape, hadamard(tape, tr.output, tape.constant(w))));
    const Tensor g_masked = tape.grad(tr.masked_weight);
    const Tensor g_m = ste_gradient(layer, g_masked);
    double err = 0.0;
    for (std::size_t i = 0; i < g_m.size(); ++i) err = std::max(err, std::abs(g_m[i] - layer.weight()[i] * g_masked[i]));
    CHECK(err <= 1e-12);
  }
}

TEST_CASE("channel straight-through gradient sums over the group") {
  MaskSettings s;
  s.granularity = Granularity::output_channel;
  MaskedLinear rows(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({0, 0}), s);
  const Tensor g = ste_gradient(rows, Tensor::matrix({{1, 1}, {1, -1}}));
  CHECK(g.identical(Tensor::matrix({{3, 3}, {-1, -1}})));
  s.granularity = Granularity::input_channel;
  MaskedLinear cols(Tensor::matrix({{1, 2}, {3, 4}}), Tensor::vector({0, 0}), s);
  CHECK(ste_gradient(cols, Tensor::matrix({{1, 1}, {1, -1}})).identical(Tensor::matrix({{4, -2}, {4, -2}})));
}

TEST_CASE("a disabled layer is not tracked on the tape") {
  MaskedLinear layer(Tensor({2, 2}, 1.0), Tensor({2}));
  Tape tape;
  const MaskedLinearTrace tr = masked_linear(tape, tape.constant(Tensor({1, 2}, 1.0)), layer, true);
  CHECK_FALSE(tr.masked_weight.valid());
}

TEST_CASE("sparsity counts zeros of enabled layers") {
  MaskedLinear a(Tensor({2, 4}, 1.0), Tensor({2}));
  a.set_enabled(true);
  a.load_binary_mask(Tensor::matrix({{1, 0, 1, 1}, {1, 1, 0, 1}}));
  const MaskedLinear* one[] = {&a};
  CHECK(sparsity(one) == 25.0);

  MaskedLinear full(Tensor({2, 4}, 1.0), Tensor({2}));
  full.set_enabled(true);
  const MaskedLinear* ones[] = {&full};
  CHECK(sparsity(ones) == 0.0);

  MaskedLinear off(Tensor({2, 4}, 1.0), Tensor({2}));
  const MaskedLinear* none[] = {&off};
  CHECK_THROWS_AS(sparsity(none), DegenerateInputError);

  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor bits = random_bits({7, 13}, rng, 0.6);
    const auto k = std::count(bits.data().begin(), bits.data().end(), 0.0);
    MaskArtifact art;
    art.layers.push_back(MaskRecord::from_binary("x", bits, 5e-3, Granularity::parameter));
    CHECK(art.layers[0].zero_count() == static_cast<std::uint64_t>(k));
    CHECK(sparsity(art) == doctest::Approx(100.0 * static_cast<double>(k) / 91.0).epsilon(1e-12));
  }
}

TEST_CASE("sparsity is monotone in the threshold") {
  std::mt19937_64 rng(31);
  MaskedLinear base(test::random_tensor({16, 16}, rng), Tensor({16}));
  const Tensor m = test::random_tensor({16, 16}, rng, 0.0, 0.02);
  double prev = -1.0;
  for (double alpha = 0.0; alpha <= 0.021; alpha += 0.001) {
    MaskSettings s;
    s.alpha = alpha;
    MaskedLinear layer(base.weight(), base.bias(), s);
    layer.set_enabled(true);
    layer.set_mask_weights(m);
    const MaskedLinear* ls[] = {&layer};
    const double sp = sparsity(ls);
    CHECK(sp >= prev);
    prev = sp;
  }
  CHECK(prev == 100.0);
}

TEST_CASE("bit packing follows MSB-first order") {
  const std::vector<double> bits{1, 0, 1, 1, 0, 0, 0, 1};
  const auto packed = pack_bits(bits);
  REQUIRE(packed.size() == 1);
  CHECK(packed[0] == 0xB1);

  const std::vector<double> nine{1, 1, 1, 1, 1, 1, 1, 1, 1};
  const auto two = pack_bits(nine);
  REQUIRE(two.size() == 2);
  CHECK(two[1] == 0x80);
  CHECK(unpack_bits(two, 9) == nine);
}

TEST_CASE("random masks survive pack and unpack") {
  std::mt19937_64 rng(10000);
  std::uniform_int_distribution<std::size_t> dim(1, 9);
  std::uniform_real_distribution<double> p(0.0, 1.0);
  for (int trial = 0; trial < 10000; ++trial) {
    const Tensor bits = random_bits({dim(rng), dim(rng)}, rng, p(rng));
    MaskArtifact a;
    a.policy = "pmt";
    a.seed = static_cast<std::uint64_t>(trial);
    a.layers.push_back(MaskRecord::from_binary("w", bits, 5e-3, Granularity::parameter));
    const auto bytes = pack_masks(a);
    const MaskArtifact b = unpack_masks(bytes);
    CHECK(b.layers[0].to_tensor().identical(bits));
    CHECK(b.total_zeros() == a.total_zeros());
    const auto again = pack_masks(b);
    if (again != bytes) FAIL("pack/unpack/pack changed bytes at trial " << trial);
  }
}

TEST_CASE("artifact text form round trips") {
  std::mt19937_64 rng(4);
  MaskArtifact a;
  a.policy = "r-amt";
  a.seed = 42;
  a.config_hash = "0123456789abcdef0123456789abcdef";
  a.layers.push_back(MaskRecord::from_binary("blocks.0.attn.wq", random_bits({4, 5}, rng), 5e-3, Granularity::parameter));
  a.layers.push_back(MaskRecord::from_binary("projection", random_bits({3, 5}, rng), 5e-3, Granularity::output_channel));
  const MaskArtifact b = mask_artifact_from_text(mask_artifact_to_text(a));
  CHECK(pack_masks(b) == pack_masks(a));
}

TEST_CASE("corrupt artifacts raise format errors") {
  std::mt19937_64 rng(5);
  MaskArtifact a;
  a.policy = "amt";
  a.layers.push_back(MaskRecord::from_binary("blocks.0.attn.wq", random_bits({8, 8}, rng), 5e-3, Granularity::parameter));
  const auto bytes = pack_masks(a);

  auto bad_magic = bytes;
  bad_magic[1] = 'Z';
  CHECK_THROWS_AS(unpack_masks(bad_magic), FormatError);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(unpack_masks(bad_version), FormatError);
  // Metadata trails the payload: u16-prefixed policy, u64 seed, 32-byte hash.
  const std::size_t metadata = 2 + 3 + 8 + 32;
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - metadata - 3);
  try {
    unpack_masks(truncated);
    FAIL("truncated artifact accepted");
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("blocks.0.attn.wq") != std::string::npos);
  }
}

TEST_CASE("mask IoU examples") {
  CHECK(mask_iou(zeros_at({1, 2, 3}), zeros_at({1, 2, 3})) == 1.0);
  CHECK(mask_iou(zeros_at({0, 1}), zeros_at({4, 5})) == 0.0);
  CHECK(mask_iou(zeros_at({1, 2, 3}), zeros_at({2, 3, 4})) == doctest::Approx(2.0 / 4.0).epsilon(1e-15));
  CHECK(mask_iou(zeros_at({}), zeros_at({})) == 1.0);
  CHECK_THROWS_AS(mask_iou(zeros_at({1}, 8), zeros_at({1}, 9)), IncompatibleArtifactError);
}
