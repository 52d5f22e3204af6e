#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "ad/data.hpp"

using namespace ad;
using namespace ad::data;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto p = std::filesystem::temp_directory_path() / ("ad_test_" + tag);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("preprocess clips the top 2% of 0..99 at 97") {
  Grid3<double> g(1, 10, 10);
  for (Index i = 0; i < 100; ++i) g.array()[i] = static_cast<double>(i);

  // Brute-force oracle: sort the 100 values, cut at the nearest-rank
  // threshold for q = 98.
  std::vector<double> sorted(g.array().data(), g.array().data() + 100);
  std::sort(sorted.begin(), sorted.end());
  const double oracle_threshold = sorted[static_cast<std::size_t>(std::floor(0.98 * 99))];
  CHECK(oracle_threshold == 97.0);

  PreprocessSpec spec;
  spec.clip_upper_pct = 2.0;
  spec.normalize = Normalize::none;
  const auto out = preprocess(Volume<double>(std::move(g)), spec);
  CHECK(out.grid().array().maxCoeff() == oracle_threshold);
  CHECK(out.grid().array().minCoeff() == 0.0);
}

TEST_CASE("preprocess unit_range maps any non-constant volume onto [0,1]") {
  Rng rng(3);
  Grid3<double> g(4, 4, 4);
  for (Index i = 0; i < g.size(); ++i) g.array()[i] = rng.uniform(-7.0, 13.0);
  PreprocessSpec spec;
  spec.normalize = Normalize::unit_range;
  const auto out = preprocess(Volume<double>(std::move(g)), spec);
  CHECK(out.grid().array().minCoeff() == doctest::Approx(0.0));
  CHECK(out.grid().array().maxCoeff() == doctest::Approx(1.0));
}

TEST_CASE("preprocess unit_range applied twice is idempotent") {
  Rng rng(5);
  Grid3<float> g(4, 4, 4);
  for (Index i = 0; i < g.size(); ++i) g.array()[i] = static_cast<float>(rng.uniform(0.0, 50.0));
  PreprocessSpec spec;
  spec.normalize = Normalize::unit_range;
  const auto once = preprocess(Volume<float>(std::move(g)), spec);
  const auto twice = preprocess(once, spec);
  CHECK((twice.grid().array() - once.grid().array()).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("preprocess zero_mean_unit_var leaves a standardized sample unchanged") {
  Rng rng(17);
  Grid3<double> g(8, 8, 8);
  for (Index i = 0; i < g.size(); ++i) g.array()[i] = rng.normal();
  const double mean = g.array().mean();
  const double sd = std::sqrt((g.array() - mean).square().mean());
  g.array() = (g.array() - mean) / sd;

  PreprocessSpec spec;
  spec.normalize = Normalize::zero_mean_unit_var;
  const Volume<double> in(std::move(g));
  const auto out = preprocess(in, spec);
  CHECK(std::abs(out.grid().array().mean()) < 1e-6);
  CHECK(std::abs(std::sqrt((out.grid().array() - out.grid().array().mean()).square().mean()) - 1.0) <
        1e-4);
  CHECK((out.grid().array() - in.grid().array()).abs().maxCoeff() < 1e-9);
}

TEST_CASE("preprocess rejects a constant volume under zero_mean_unit_var") {
  Grid3<double> g(2, 2, 2);
  g.array().setConstant(3.5);
  PreprocessSpec spec;
  spec.normalize = Normalize::zero_mean_unit_var;
  CHECK_THROWS_AS(preprocess(Volume<double>(std::move(g)), spec), std::invalid_argument);
}

TEST_CASE("stack_depth repeats slices cyclically (D=8 -> 32)") {
  Grid3<float> g(8, 2, 2);
  for (Index z = 0; z < 8; ++z)
    for (Index i = 0; i < 4; ++i) g.array()[z * 4 + i] = static_cast<float>(z);
  const auto out = stack_depth(Volume<float>(std::move(g)), 32);
  REQUIRE(out.shape().d == 32);
  // Oracle: explicit index map i mod 8.
  for (Index z = 0; z < 32; ++z)
    for (Index i = 0; i < 4; ++i) CHECK(out.grid().array()[z * 4 + i] == static_cast<float>(z % 8));
}

TEST_CASE("stack_depth is identity when depth already matches") {
  Grid3<float> g(32, 2, 2);
  Rng rng(7);
  for (Index i = 0; i < g.size(); ++i) g.array()[i] = static_cast<float>(rng.uniform());
  const Volume<float> v(std::move(g));
  const auto out = stack_depth(v, 32);
  CHECK((out.grid().array() == v.grid().array()).all());
}

TEST_CASE("stack_depth D=10 -> 32 gives slices 0,1 four appearances, 2..9 three") {
  Grid3<float> g(10, 1, 1);
  for (Index z = 0; z < 10; ++z) g.array()[z] = static_cast<float>(z);
  const auto out = stack_depth(Volume<float>(std::move(g)), 32);
  std::vector<int> counts(10, 0);
  for (Index z = 0; z < 32; ++z) {
    CHECK(out.grid().array()[z] == static_cast<float>(z % 10));
    counts[static_cast<std::size_t>(z % 10)]++;
  }
  CHECK(counts[0] == 4);
  CHECK(counts[1] == 4);
  for (int s = 2; s < 10; ++s) CHECK(counts[static_cast<std::size_t>(s)] == 3);
}

TEST_CASE("stack_depth rejects shrinking") {
  Grid3<float> g(8, 1, 1);
  CHECK_THROWS_AS(stack_depth(Volume<float>(std::move(g)), 4), std::invalid_argument);
}

TEST_CASE("make_synthetic is bit-identical for a fixed seed") {
  SyntheticSpec spec;
  spec.seed = 7;
  spec.num_domains = 2;
  spec.volumes_per_domain = 2;
  const auto a = make_synthetic<float>(spec);
  const auto b = make_synthetic<float>(spec);
  REQUIRE(a.labeled().size() == b.labeled().size());
  REQUIRE(a.unlabeled().size() == b.unlabeled().size());
  for (std::size_t i = 0; i < a.labeled().size(); ++i) {
    CHECK((a.labeled()[i].first.grid().array() == b.labeled()[i].first.grid().array()).all());
    CHECK((a.labeled()[i].second.grid().array() == b.labeled()[i].second.grid().array()).all());
  }
  for (std::size_t i = 0; i < a.unlabeled().size(); ++i)
    CHECK((a.unlabeled()[i].grid().array() == b.unlabeled()[i].grid().array()).all());
}

TEST_CASE("make_synthetic skew=1 balances foreground voxel counts within 10%") {
  SyntheticSpec spec;
  spec.num_domains = 1;
  spec.volumes_per_domain = 1;
  spec.labeled_fraction = 1.0;
  spec.num_classes = 3;
  spec.class_frequency_skew = 1.0;
  spec.grid_size = 16;

  Eigen::Array2d totals = Eigen::Array2d::Zero();
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    spec.seed = seed;
    const auto split = make_synthetic<float>(spec);
    const auto& y = split.labeled()[0].second.grid().array();
    totals[0] += static_cast<double>((y == 1).count());
    totals[1] += static_cast<double>((y == 2).count());
  }
  const double mean = totals.mean();
  CHECK(std::abs(totals[0] - mean) / mean < 0.10);
  CHECK(std::abs(totals[1] - mean) / mean < 0.10);
}

TEST_CASE("make_synthetic domains differ by more than the pooled std of volume means") {
  SyntheticSpec spec;
  spec.num_domains = 2;
  spec.volumes_per_domain = 3;
  spec.labeled_fraction = 1.0;
  std::vector<double> m0, m1;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    spec.seed = seed;
    const auto split = make_synthetic<float>(spec);
    for (std::size_t i = 0; i < split.labeled().size(); ++i) {
      const double m = split.labeled()[i].first.grid().array().mean();
      (split.labeled_domains()[i] == 0 ? m0 : m1).push_back(m);
    }
  }
  auto stats = [](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size());
    return std::pair{mean, std::sqrt(var)};
  };
  const auto [mean0, sd0] = stats(m0);
  const auto [mean1, sd1] = stats(m1);
  const double pooled = std::sqrt(0.5 * (sd0 * sd0 + sd1 * sd1));
  CHECK(std::abs(mean1 - mean0) > pooled);
}

TEST_CASE("make_synthetic errors when the grid cannot hold all classes") {
  SyntheticSpec spec;
  spec.grid_size = 4;
  spec.num_classes = 8;
  CHECK_THROWS_AS(make_synthetic<float>(spec), std::runtime_error);
}

TEST_CASE("make_synthetic SemiDG configuration spans several labeled domains") {
  SyntheticSpec spec;
  spec.num_domains = 4;
  spec.volumes_per_domain = 2;
  spec.labeled_fraction = 0.5;
  const auto split = make_synthetic<float>(spec);
  std::set<int> labeled_doms(split.labeled_domains().begin(), split.labeled_domains().end());
  CHECK(labeled_doms.size() == 4);
  CHECK(split.labeled().size() == 4);
  CHECK(split.unlabeled().size() == 4);
}

TEST_CASE("make_synthetic UDA configuration keeps labels in domain 0 only") {
  SyntheticSpec spec;
  spec.num_domains = 2;
  spec.volumes_per_domain = 3;
  spec.labeled_fraction = 1.0;
  spec.labeled_domains = 1;
  const auto ds = make_synthetic_with_truth<float>(spec);
  CHECK(ds.split.labeled().size() == 3);
  CHECK(ds.split.unlabeled().size() == 3);
  for (int d : ds.split.labeled_domains()) CHECK(d == 0);
  for (int d : ds.split.unlabeled_domains()) CHECK(d == 1);
  CHECK(ds.unlabeled_truth.size() == 3);
}

TEST_CASE("load_split reads counts and domains from a manifest") {
  const auto dir = temp_dir("manifest_counts");
  SyntheticSpec spec;
  spec.num_domains = 1;
  spec.volumes_per_domain = 5;
  spec.labeled_fraction = 0.4;  // 2 labeled, 3 unlabeled
  spec.seed = 9;
  const auto ds = make_synthetic_with_truth<float>(spec);
  save_dataset(dir, ds);
  const auto split = load_split<float>(dir / "train_manifest.txt");
  CHECK(split.labeled().size() == 2);
  CHECK(split.unlabeled().size() == 3);
}

TEST_CASE("load_split round-trips a synthetic dataset exactly") {
  const auto dir = temp_dir("roundtrip");
  SyntheticSpec spec;
  spec.num_domains = 2;
  spec.volumes_per_domain = 2;
  spec.seed = 21;
  const auto ds = make_synthetic_with_truth<float>(spec);
  save_dataset(dir, ds);
  const auto split = load_split<float>(dir / "train_manifest.txt");
  REQUIRE(split.labeled().size() == ds.split.labeled().size());
  REQUIRE(split.unlabeled().size() == ds.split.unlabeled().size());
  for (std::size_t i = 0; i < split.labeled().size(); ++i) {
    CHECK((split.labeled()[i].first.grid().array() == ds.split.labeled()[i].first.grid().array())
              .all());
    CHECK((split.labeled()[i].second.grid().array() == ds.split.labeled()[i].second.grid().array())
              .all());
  }
  for (std::size_t i = 0; i < split.unlabeled().size(); ++i)
    CHECK((split.unlabeled()[i].grid().array() == ds.split.unlabeled()[i].grid().array()).all());
  CHECK(split.labeled_domains() == ds.split.labeled_domains());
  CHECK(split.unlabeled_domains() == ds.split.unlabeled_domains());
}

TEST_CASE("load_split rejects a volume/label shape mismatch") {
  const auto dir = temp_dir("shape_mismatch");
  Grid3<float> v(4, 4, 4);
  Grid3<std::int32_t> y(4, 4, 2);
  save_volume(dir / "v.vol", Volume<float>(std::move(v)));
  save_label(dir / "y.lab", LabelMap(std::move(y), 2));
  std::ofstream m(dir / "m.txt");
  m << "labeled 0 v.vol y.lab\n";
  m.close();
  CHECK_THROWS_AS(load_split<float>(dir / "m.txt"), std::runtime_error);
}

TEST_CASE("load_split reports missing files") {
  const auto dir = temp_dir("missing");
  std::ofstream m(dir / "m.txt");
  m << "unlabeled 0 nope.vol\n";
  m.close();
  CHECK_THROWS_AS(load_split<float>(dir / "m.txt"), std::runtime_error);
}

TEST_CASE("manifest @preprocess directive is applied on load") {
  const auto dir = temp_dir("preproc_directive");
  Grid3<float> g(2, 2, 2);
  for (Index i = 0; i < 8; ++i) g.array()[i] = static_cast<float>(i);
  Grid3<std::int32_t> y(2, 2, 2);
  save_volume(dir / "v.vol", Volume<float>(std::move(g)));
  save_label(dir / "y.lab", LabelMap(std::move(y), 2));
  std::ofstream m(dir / "m.txt");
  m << "@preprocess normalize=unit_range\n";
  m << "labeled 0 v.vol y.lab\n";
  m.close();
  const auto split = load_split<float>(dir / "m.txt");
  CHECK(split.labeled()[0].first.grid().array().minCoeff() == 0.0f);
  CHECK(split.labeled()[0].first.grid().array().maxCoeff() == 1.0f);
}
