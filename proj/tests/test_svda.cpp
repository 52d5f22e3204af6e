#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "ad/svda.hpp"

using namespace ad;
using namespace ad::svda;

namespace {

Volume<float> random_volume(Rng& rng, Shape3 s) {
  Grid3<float> g(s.d, s.h, s.w);
  for (Index i = 0; i < g.size(); ++i) g.array()[i] = static_cast<float>(rng.uniform());
  return Volume<float>(std::move(g));
}

LabelMap random_label(Rng& rng, Shape3 s, int k) {
  Grid3<std::int32_t> g(s.d, s.h, s.w);
  for (Index i = 0; i < g.size(); ++i) g.array()[i] = static_cast<std::int32_t>(rng.uniform_index(k));
  return LabelMap(std::move(g), k);
}

std::set<std::int32_t> class_set(const LabelMap& y) {
  return {y.grid().array().data(), y.grid().array().data() + y.grid().size()};
}

}  // namespace

TEST_CASE("sample_ops N=3 yields three distinct names") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto ops = sample_ops(3, rng);
    REQUIRE(ops.size() == 3);
    std::set<OpName> names;
    for (const auto& op : ops) names.insert(op.name);
    CHECK(names.size() == 3);
  }
}

TEST_CASE("sample_ops N=7 exhausts the set as a permutation") {
  Rng rng(2);
  const auto ops = sample_ops(7, rng);
  std::set<OpName> names;
  for (const auto& op : ops) names.insert(op.name);
  CHECK(names.size() == 7);
}

TEST_CASE("sample_ops is deterministic under a fixed seed") {
  Rng a(42), b(42);
  const auto ops_a = sample_ops(5, a);
  const auto ops_b = sample_ops(5, b);
  REQUIRE(ops_a.size() == ops_b.size());
  for (std::size_t i = 0; i < ops_a.size(); ++i) CHECK(ops_a[i].name == ops_b[i].name);
}

TEST_CASE("sample_ops rejects N outside [1,7]") {
  Rng rng(3);
  CHECK_THROWS_AS(sample_ops(8, rng), std::invalid_argument);
  CHECK_THROWS_AS(sample_ops(0, rng), std::invalid_argument);
}

TEST_CASE("brightness shifts every voxel by the sampled amount and keeps the label") {
  Rng rng(5);
  const auto v = random_volume(rng, {4, 4, 4});
  const auto y = random_label(rng, {4, 4, 4}, 3);
  SvdaConfig cfg;
  Rng apply_rng(9);
  const auto out = apply<float>(v, y, {{OpName::brightness, OpKind::voxel}}, cfg, apply_rng);
  REQUIRE(out.applied.size() == 1);
  const float shift = static_cast<float>(out.applied[0].params[0]);
  CHECK((out.volume.grid().array() - (v.grid().array() + shift)).abs().maxCoeff() < 1e-6f);
  CHECK((out.label->grid().array() == y.grid().array()).all());
}

TEST_CASE("rotation with all ranges forced to zero is the identity") {
  Rng rng(7);
  const auto v = random_volume(rng, {4, 4, 4});
  const auto y = random_label(rng, {4, 4, 4}, 2);
  SvdaConfig cfg;
  cfg.rotation_deg = {{{0, 0}, {0, 0}, {0, 0}}};
  Rng apply_rng(11);
  const auto out = apply<float>(v, y, {{OpName::random_rotation, OpKind::spatial}}, cfg, apply_rng);
  CHECK((out.volume.grid().array() - v.grid().array()).abs().maxCoeff() < 1e-6f);
  CHECK((out.label->grid().array() == y.grid().array()).all());
}

TEST_CASE("90-degree depth-axis rotation permutes the label like the index oracle") {
  Rng rng(13);
  const auto v = random_volume(rng, {4, 4, 4});
  const auto y = random_label(rng, {4, 4, 4}, 4);
  SvdaConfig cfg;
  cfg.rotation_deg = {{{90, 90}, {0, 0}, {0, 0}}};
  Rng apply_rng(17);
  const auto out = apply<float>(v, y, {{OpName::random_rotation, OpKind::spatial}}, cfg, apply_rng);

  // Oracle: a quarter turn about the depth axis maps output voxel (z, y, x)
  // to input voxel (z, x, 3 - y) on a 4^3 grid.
  for (Index z = 0; z < 4; ++z)
    for (Index yy = 0; yy < 4; ++yy)
      for (Index x = 0; x < 4; ++x)
        CHECK(out.label->grid()(z, yy, x) == y.grid()(z, x, 3 - yy));
}

TEST_CASE("random_crop produces the configured patch shape") {
  Rng rng(19);
  const auto v = random_volume(rng, {8, 10, 12});
  const auto y = random_label(rng, {8, 10, 12}, 3);
  SvdaConfig cfg;
  cfg.patch = {4, 4, 4};
  Rng apply_rng(23);
  const auto out = apply<float>(v, y, {{OpName::random_crop, OpKind::spatial}}, cfg, apply_rng);
  CHECK(out.volume.shape() == Shape3{4, 4, 4});
  CHECK(out.label->shape() == Shape3{4, 4, 4});
}

TEST_CASE("random_crop larger than the volume reflect-pads") {
  Rng rng(29);
  const auto v = random_volume(rng, {2, 2, 2});
  SvdaConfig cfg;
  cfg.patch = {4, 4, 4};
  Rng apply_rng(31);
  const auto out =
      apply<float>(v, std::nullopt, {{OpName::random_crop, OpKind::spatial}}, cfg, apply_rng);
  CHECK(out.volume.shape() == Shape3{4, 4, 4});
  CHECK(out.volume.grid().all_finite());
}

TEST_CASE("spatial ops never invent label classes") {
  Rng rng(37);
  SvdaConfig cfg;
  cfg.patch = {6, 6, 6};
  for (int trial = 0; trial < 10; ++trial) {
    const auto v = random_volume(rng, {8, 8, 8});
    // Leave class 0 out so any zero-fill bug would show up as a new class.
    Grid3<std::int32_t> g(8, 8, 8);
    for (Index i = 0; i < g.size(); ++i)
      g.array()[i] = 1 + static_cast<std::int32_t>(rng.uniform_index(3));
    const LabelMap y(std::move(g), 4);
    Rng apply_rng(100 + static_cast<std::uint64_t>(trial));
    const auto ops = sample_ops(3, apply_rng);
    const auto out = apply<float>(v, y, ops, cfg, apply_rng);
    const auto before = class_set(y);
    for (auto c : class_set(*out.label)) CHECK(before.count(c) == 1);
  }
}

TEST_CASE("voxel-op-only pipelines leave the label bit-identical") {
  Rng rng(41);
  const auto v = random_volume(rng, {5, 5, 5});
  const auto y = random_label(rng, {5, 5, 5}, 3);
  SvdaConfig cfg;
  std::vector<AugmentationOp> ops = {{OpName::gaussian_blur, OpKind::voxel},
                                     {OpName::contrast, OpKind::voxel},
                                     {OpName::gamma, OpKind::voxel},
                                     {OpName::brightness, OpKind::voxel}};
  Rng apply_rng(43);
  const auto out = apply<float>(v, y, ops, cfg, apply_rng);
  CHECK((out.label->grid().array() == y.grid().array()).all());
  CHECK(out.volume.grid().all_finite());
}

TEST_CASE("apply is deterministic for a fixed seed and keeps the applied log") {
  Rng rng(47);
  const auto v = random_volume(rng, {6, 6, 6});
  const auto y = random_label(rng, {6, 6, 6}, 2);
  SvdaConfig cfg;
  cfg.patch = {4, 4, 4};
  Rng s1(55), s2(55);
  const auto ops1 = sample_ops(3, s1);
  const auto ops2 = sample_ops(3, s2);
  const auto a = apply<float>(v, y, ops1, cfg, s1);
  const auto b = apply<float>(v, y, ops2, cfg, s2);
  CHECK((a.volume.grid().array() == b.volume.grid().array()).all());
  CHECK((a.label->grid().array() == b.label->grid().array()).all());
  REQUIRE(a.applied.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(a.applied[i].name == b.applied[i].name);
    CHECK(a.applied[i].params == b.applied[i].params);
  }
}

TEST_CASE("apply keeps a label present iff the input had one") {
  Rng rng(53);
  const auto v = random_volume(rng, {4, 4, 4});
  SvdaConfig cfg;
  Rng apply_rng(59);
  const auto ops = sample_ops(2, apply_rng);
  const auto out = apply<float>(v, std::nullopt, ops, cfg, apply_rng);
  CHECK(!out.label.has_value());
  CHECK(out.applied.size() == 2);
}
