#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "smsl/checks.hpp"
#include "smsl/io.hpp"
#include "test_util.hpp"

namespace smsl {
namespace {

namespace fs = std::filesystem;
using testing::max_abs_diff;
using testing::random_tensor;
using T64 = Tensor<double>;

LevelSet<double> pyramid(std::size_t L, std::size_t C, std::size_t size, std::uint64_t seed) {
  return checks::random_levels<double>(L, C, size, size, seed);
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("smsl_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

TEST(LevelSet, Validation) {
  EXPECT_NO_THROW(validate_levels(pyramid(3, 4, 16, 1)));
  auto one = pyramid(2, 4, 16, 1);
  one.features.pop_back();
  EXPECT_THROW(validate_levels(one), DimensionError);
  auto channels = pyramid(2, 4, 16, 1);
  channels.features[1] = T64::zeros({3, 8, 8});
  EXPECT_THROW(validate_levels(channels), DimensionError);
  auto halving = pyramid(2, 4, 16, 1);
  halving.features[1] = T64::zeros({4, 4, 4});
  EXPECT_THROW(validate_levels(halving), DimensionError);
  EXPECT_THROW(pyramid_shapes(4, 2, 12, 12), DimensionError);
}

TEST(ExtraLevels, Geometry) {
  const auto c5 = random_tensor({256, 32, 32}, 1);
  const std::array<T64, 2> convs{random_tensor({256, 256, 3, 3}, 2, -0.01, 0.01),
                                 random_tensor({256, 256, 3, 3}, 3, -0.01, 0.01)};
  const auto [c6, c7] = make_extra_levels(c5, convs);
  EXPECT_EQ(c6.shape(), (Shape{256, 16, 16}));
  EXPECT_EQ(c7.shape(), (Shape{256, 8, 8}));
}

TEST(ExtraLevels, ZeroWeights) {
  const auto c5 = random_tensor({4, 8, 8}, 4);
  const std::array<T64, 2> convs{T64::zeros({4, 4, 3, 3}), T64::zeros({4, 4, 3, 3})};
  const auto [c6, c7] = make_extra_levels(c5, convs);
  EXPECT_EQ(c6, T64::zeros({4, 4, 4}));
  EXPECT_EQ(c7, T64::zeros({4, 2, 2}));
  EXPECT_THROW(make_extra_levels(random_tensor({4, 6, 6}, 5), convs), DimensionError);
}

TEST(Gather, DefaultLevelAndSizes) {
  const auto levels = pyramid(5, 2, 32, 6);
  const auto cfg = default_config(levels, 1);
  EXPECT_EQ(cfg.gather_level, 5);
  const auto d = gather(levels, cfg);
  ASSERT_EQ(d.size(), 5u);
  for (const auto& x : d) EXPECT_EQ(x.shape(), (Shape{2, 8, 8}));
  EXPECT_TRUE(bit_equal(d[2], levels.at_level(5)));
  EXPECT_EQ(default_gather_level(3, 6), 4);
}

TEST(Gather, ConstantsStayConstant) {
  LevelSet<double> levels{3, {}};
  for (const auto& s : pyramid_shapes(4, 3, 16, 16)) levels.features.push_back(T64::full(s.to_shape(), -0.375));
  for (const auto& x : gather(levels, default_config(levels, 1)))
    for (double v : x.data()) EXPECT_EQ(v, -0.375);
}

TEST(Gather, RejectsLevelOutsideRange) {
  const auto levels = pyramid(3, 2, 16, 7);
  auto cfg = default_config(levels, 1);
  cfg.gather_level = 9;
  EXPECT_THROW(gather(levels, cfg), ConfigError);
}

TEST(ChannelRescale, ZeroSecondLayerHalves) {
  auto p = init_params<double>(3, 4, 2, 8, false);
  p.cr.w2 = T64::zeros(p.cr.w2.shape());
  const auto levels = pyramid(3, 4, 16, 9);
  const auto d = gather(levels, default_config(levels, 2));
  T64 gate;
  const auto q = channel_rescale(d, p.cr, &gate);
  EXPECT_EQ(gate, T64::full({12}, 0.5));
  for (std::size_t l = 0; l < 3; ++l) EXPECT_TRUE(bit_equal(q[l], scale(d[l], 0.5)));
}

TEST(ChannelRescale, ShrinksMagnitudes) {
  const auto p = init_params<double>(3, 4, 2, 10, false);
  const auto levels = pyramid(3, 4, 16, 11);
  const auto d = gather(levels, default_config(levels, 2));
  const auto q = channel_rescale(d, p.cr);
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t k = 0; k < d[l].size(); ++k) {
      if (d[l][k] != 0.0) {
        EXPECT_LT(std::abs(q[l][k]), std::abs(d[l][k]));
      }
    }
}

TEST(ChannelRescale, RejectsWrongWeights) {
  const auto p = init_params<double>(2, 4, 2, 10, false);
  const auto levels = pyramid(3, 4, 16, 11);
  EXPECT_THROW(channel_rescale(gather(levels, default_config(levels, 2)), p.cr), DimensionError);
}

TEST(SelectiveCombine, ZeroExpansionGivesMean) {
  const auto p = checks::with_zero_expansion(init_params<double>(4, 6, 3, 12, false));
  std::vector<T64> q;
  for (int i = 0; i < 4; ++i) q.push_back(random_tensor({6, 4, 4}, 13 + i));
  T64 attention;
  const auto out = selective_combine(q, p.sfc_local[1], 1e-5, &attention);
  for (double a : attention.data()) EXPECT_EQ(a, 0.25);
  const T64 mean = scale(add(add(q[0], q[1]), add(q[2], q[3])), 0.25);
  EXPECT_LE(max_abs_diff(out, mean), 1e-12);
}

TEST(SelectiveCombine, SingleLevelIsIdentity) {
  const auto p = init_params<double>(1 + 1, 4, 2, 14, false);
  BasicSfcBranch<T64> b = p.sfc_local[0];
  b.v = random_tensor({4, 2}, 15, -5.0, 5.0);  // L = 1: expansion is [C, C/r]
  const std::vector<T64> q{random_tensor({4, 4, 4}, 16)};
  EXPECT_EQ(selective_combine(q, b, 1e-5), q[0]);
}

TEST(SelectiveCombine, AttentionColumnsSumToOne) {
  const auto p = init_params<double>(5, 8, 4, 17, false);
  std::vector<T64> q;
  for (int i = 0; i < 5; ++i) q.push_back(random_tensor({8, 4, 4}, 18 + i, -3.0, 3.0));
  T64 attention;
  selective_combine(q, p.sfc_global, 1e-5, &attention);
  EXPECT_EQ(attention.shape(), (Shape{5, 8}));
  EXPECT_LE(checks::attention_column_error(attention), 1e-12);
}

TEST(Nonlocal, ZeroOutputProjectionIsIdentity) {
  auto p = init_params<double>(2, 8, 4, 19, false);
  p.nonlocal.w_z = T64::zeros(p.nonlocal.w_z.shape());
  const auto fg = random_tensor({8, 4, 4}, 20);
  EXPECT_TRUE(bit_equal(nonlocal_refine(fg, p.nonlocal), fg));
}

TEST(Nonlocal, SinglePosition) {
  const auto p = init_params<double>(2, 4, 2, 21, false);
  const auto fg = random_tensor({4, 1, 1}, 22);
  const auto want = add(fg, conv2d(conv2d(fg, p.nonlocal.g, 1, 0), p.nonlocal.w_z, 1, 0));
  EXPECT_LE(max_abs_diff(nonlocal_refine(fg, p.nonlocal), want), 1e-15);
}

TEST(Nonlocal, OddChannelsRejected) {
  BasicNonLocal<T64> p{T64::zeros({1, 3, 1, 1}), T64::zeros({1, 3, 1, 1}), T64::zeros({1, 3, 1, 1}),
                       T64::zeros({3, 1, 1, 1})};
  EXPECT_THROW(nonlocal_refine(random_tensor({3, 2, 2}, 1), p), ConfigError);
}

TEST(FuseAndScatter, ZeroContributionsReturnInput) {
  const auto levels = pyramid(4, 2, 16, 23);
  const auto shape = gather(levels, default_config(levels, 1)).front().shape();
  const std::vector<T64> zeros(4, T64::zeros(shape));
  const auto out = fuse_and_scatter(zeros, zeros[0], levels);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_TRUE(bit_equal(out.features[l], levels.features[l]));
  EXPECT_THROW(fuse_and_scatter(std::vector<T64>(3, T64::zeros(shape)), zeros[0], levels), DimensionError);
}

TEST(Forward, ZeroInputGivesZeroOutput) {
  LevelSet<double> levels{3, {}};
  for (const auto& s : pyramid_shapes(3, 4, 16, 16)) levels.features.push_back(T64::zeros(s.to_shape()));
  const auto out = smsl_forward(levels, init_params<double>(3, 4, 2, 25, false), default_config(levels, 2));
  for (std::size_t l = 0; l < 3; ++l) EXPECT_EQ(out.features[l], levels.features[l]);
}

TEST(Forward, ClosedFormOfStages) {
  const auto levels = pyramid(3, 4, 16, 26);
  const auto p = init_params<double>(3, 4, 2, 27, false);
  const auto cfg = default_config(levels, 2);
  const auto q = channel_rescale(gather(levels, cfg), p.cr);
  std::vector<T64> f;
  for (std::size_t l = 0; l < 3; ++l) f.push_back(selective_combine(q, p.sfc_local[l], cfg.ln_eps));
  const auto g = nonlocal_refine(selective_combine(q, p.sfc_global, cfg.ln_eps), p.nonlocal);
  const auto want = fuse_and_scatter(f, g, levels);
  const auto got = smsl_forward(levels, p, cfg);
  for (std::size_t l = 0; l < 3; ++l) EXPECT_TRUE(bit_equal(got.features[l], want.features[l]));
}

TEST(Forward, DeterministicAcrossRunsAndThreads) {
  const auto levels = pyramid(2, 2, 4, 28);
  const auto p = init_params<double>(2, 2, 1, 29, false);
  const auto cfg = default_config(levels, 1);
  const auto ref = smsl_forward(levels, p, cfg);
  for (int i = 0; i < 10; ++i) {
    const auto again = smsl_forward(levels, p, cfg);
    for (std::size_t l = 0; l < 2; ++l) EXPECT_TRUE(bit_equal(again.features[l], ref.features[l]));
  }
  ForwardOptions<double> opt;
  opt.threads = 8;
  const auto threaded = smsl_forward(levels, p, cfg, opt);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_TRUE(bit_equal(threaded.features[l], ref.features[l]));

  const auto big = pyramid(5, 16, 32, 30);
  const auto pb = init_params<double>(5, 16, 8, 31, false);
  const auto one = smsl_forward(big, pb, default_config(big, 8));
  const auto eight = smsl_forward(big, pb, default_config(big, 8), opt);
  for (std::size_t l = 0; l < 5; ++l) EXPECT_TRUE(bit_equal(one.features[l], eight.features[l]));
}

TEST(Forward, ShapeMatrix) {
  for (std::size_t L = 2; L <= 5; ++L)
    for (std::size_t C : {2u, 4u, 8u, 16u})
      for (std::size_t size : {16u, 32u}) {
        const std::size_t r = C >= 4 ? C / 2 : 1;
        const auto levels = pyramid(L, C, size, 100 * L + C + size);
        const auto out = smsl_forward(levels, init_params<double>(L, C, r, 7, false), default_config(levels, r));
        ASSERT_EQ(out.count(), L);
        EXPECT_EQ(out.l_min, levels.l_min);
        for (std::size_t l = 0; l < L; ++l) EXPECT_EQ(out.features[l].shape(), levels.features[l].shape());
      }
}

TEST(Forward, FloatTracksDouble) {
  const auto levels = pyramid(3, 8, 16, 32);
  const auto p = init_params<double>(3, 8, 4, 33, false);
  const auto ref = smsl_forward(levels, p, default_config(levels, 4));
  LevelSet<float> lf{levels.l_min, {}};
  for (const auto& f : levels.features) lf.features.push_back(f.cast<float>());
  const auto out = smsl_forward(lf, cast_params<float>(p), default_config(lf, 4));
  for (std::size_t l = 0; l < 3; ++l) EXPECT_LE(max_abs_diff(out.features[l].cast<double>(), ref.features[l]), 1e-4);
}

TEST(Forward, RejectsMismatchedParams) {
  const auto levels = pyramid(3, 4, 16, 34);
  EXPECT_THROW(smsl_forward(levels, init_params<double>(2, 4, 2, 1, false), default_config(levels, 2)),
               DimensionError);
}

TEST(Forward, TapedMatchesPlain) {
  const auto levels = pyramid(2, 4, 8, 35);
  const auto p = init_params<double>(2, 4, 2, 36, false);
  const auto cfg = default_config(levels, 2);
  const auto plain = smsl_forward(levels, p, cfg);
  Tape<double> tape;
  const auto taped = smsl_forward(levels_on_tape(tape, levels), params_on_tape(tape, p), cfg);
  for (std::size_t l = 0; l < 2; ++l) EXPECT_TRUE(bit_equal(taped.features[l].value(), plain.features[l]));
}

TEST(InitParams, Deterministic) {
  const auto a = init_params<double>(3, 8, 4, 5, true);
  const auto b = init_params<double>(3, 8, 4, 5, true);
  const auto c = init_params<double>(3, 8, 4, 6, true);
  bool differs = false;
  std::vector<T64> ta, tc;
  for_each_param(a, [&](const std::string&, const T64& t) { ta.push_back(t); });
  for_each_param(c, [&](const std::string&, const T64& t) { tc.push_back(t); });
  std::size_t i = 0;
  for_each_param(b, [&](const std::string& key, const T64& t) {
    EXPECT_TRUE(bit_equal(t, ta[i])) << key;
    if (!key.ends_with("ln_gamma") && !key.ends_with("ln_beta")) differs = differs || !bit_equal(t, tc[i]);
    ++i;
  });
  EXPECT_TRUE(differs);
}

TEST(InitParams, UniformStatistics) {
  // Per weight tensor of U(-a, a), z = mean / (sigma / sqrt(n)) with
  // sigma = a / sqrt(3). Any single tensor exceeds |z| = 3 with probability
  // 0.27%, so the check pools z over many seeds: it must look standard normal.
  std::size_t tensors = 0, beyond_3 = 0;
  double zsum = 0.0, z2sum = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto p = init_params<double>(5, 64, 8, seed, false);
    for_each_param(p, [&](const std::string& key, const T64& t) {
      if (key.ends_with("ln_gamma")) {
        EXPECT_EQ(t, T64::full(t.shape(), 1.0));
        return;
      }
      if (key.ends_with("ln_beta")) {
        EXPECT_EQ(t, T64::zeros(t.shape()));
        return;
      }
      const double n = static_cast<double>(t.size());
      const double a = std::sqrt(6.0 / static_cast<double>(t.size() / t.dim(0)));
      const double sigma = a / std::sqrt(3.0);
      double mean = 0.0, sq = 0.0;
      for (double v : t.data()) {
        ASSERT_LE(std::abs(v), a);
        mean += v;
        sq += v * v;
      }
      mean /= n;
      EXPECT_NEAR(std::sqrt(sq / n), sigma, 0.1 * sigma) << key;
      const double z = mean / (sigma / std::sqrt(n));
      zsum += z;
      z2sum += z * z;
      beyond_3 += std::abs(z) > 3.0 ? 1 : 0;
      ++tensors;
    });
  }
  const double m = static_cast<double>(tensors);
  EXPECT_LE(std::abs(zsum / m), 3.0 / std::sqrt(m));
  EXPECT_NEAR(z2sum / m, 1.0, 0.1);
  EXPECT_LE(static_cast<double>(beyond_3) / m, 0.01);
}

TEST(InitParams, StructureErrors) {
  EXPECT_THROW(init_params<double>(1, 8, 4, 1, false), ConfigError);
  EXPECT_THROW(init_params<double>(3, 7, 7, 1, false), ConfigError);
  EXPECT_THROW(init_params<double>(3, 8, 3, 1, false), ConfigError);
}

TEST(CountParams, PaperConfiguration) {
  const auto n = count_params(5, 256, 8, false);
  EXPECT_EQ(n.cr, 409600u);
  EXPECT_EQ(n.sfc_branch, 32u * 256 + 2 * 32 + 1280 * 32);
  EXPECT_EQ(n.sfc_branch, 49216u);
  EXPECT_EQ(n.sfc_local, 5 * n.sfc_branch);
  EXPECT_EQ(n.sfc_global, n.sfc_branch);
  EXPECT_EQ(n.nonlocal, 4u * 128 * 256);
  EXPECT_GE(n.total, 800000u);
  EXPECT_LE(n.total, 1100000u);
}

TEST(CountParams, MaterializedMatchesFormula) {
  const auto p = init_params<double>(3, 8, 4, 1, true);
  const auto a = count_params(p), b = count_params(3, 8, 4, true);
  EXPECT_EQ(a.total, b.total);
  EXPECT_EQ(a.extra, 2u * 8 * 8 * 9);
}

TEST(Io, ParamsRoundTrip) {
  const auto dir = scratch_dir("params");
  const auto p = init_params<double>(3, 8, 4, 77, true);
  io::save_params(dir, p);
  const auto q = io::load_params<double>(dir);
  EXPECT_EQ(q.seed, 77u);
  ASSERT_TRUE(q.extra.has_value());
  std::vector<T64> tp;
  for_each_param(p, [&](const std::string&, const T64& t) { tp.push_back(t); });
  std::size_t i = 0;
  for_each_param(q, [&](const std::string& key, const T64& t) { EXPECT_TRUE(bit_equal(t, tp[i++])) << key; });
  fs::remove_all(dir);
}

TEST(Io, DetectsCorruption) {
  const auto dir = scratch_dir("corrupt");
  io::save_params(dir, init_params<double>(2, 4, 2, 1, false));
  const fs::path file = dir / "tensors" / "cr.w1.smst";
  auto bytes = smst::read_file(file);
  bytes.back() ^= 0x01;
  smst::write_file(file, bytes);
  EXPECT_THROW(io::load_params<double>(dir), IoError);

  bytes.back() ^= 0x01;
  bytes[0] = 'X';
  smst::write_file(file, bytes);
  EXPECT_THROW(smst::load<double>(file), IoError);
  fs::remove_all(dir);
  EXPECT_THROW(io::load_params<double>(dir), IoError);
}

TEST(Io, LevelsRoundTrip) {
  const auto dir = scratch_dir("levels");
  const auto levels = pyramid(4, 4, 16, 78);
  io::save_levels(dir, levels);
  EXPECT_EQ(io::levels_dtype(dir), DType::F64);
  const auto back = io::load_levels<double>(dir);
  EXPECT_EQ(back.l_min, levels.l_min);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_TRUE(bit_equal(back.features[l], levels.features[l]));
  fs::remove_all(dir);
}

}  // namespace
}  // namespace smsl
