#include <gtest/gtest.h>

#include <cmath>

#include "magnet/standardize.hpp"
#include "magnet/tvdiff.hpp"

using namespace magnet;

namespace {

Dataset synthetic_dataset(std::size_t m, std::size_t l, std::size_t n, std::size_t d,
                          const std::function<double(std::size_t seq, std::size_t t,
                                                     std::size_t agent, std::size_t dim)>& fill) {
    Dataset ds;
    ds.system = SystemId::point_mass;
    ds.n_agents = n;
    ds.state_dim = d;
    ds.num_sequences = m;
    ds.seq_length = l;
    ds.dt = 0.01;
    ds.states.resize(m * l * n * d);
    for (std::size_t s = 0; s < m; ++s)
        for (std::size_t t = 0; t < l; ++t)
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t k = 0; k < d; ++k)
                    ds.states[ds.offset(s, t) + a * d + k] = fill(s, t, a, k);
    return ds;
}

// Independent mean/std oracle over one dimension of a dataset.
std::pair<double, double> dim_stats(const Dataset& ds, std::size_t dim) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t s = 0; s < ds.num_sequences; ++s)
        for (std::size_t t = 0; t < ds.seq_length; ++t)
            for (std::size_t a = 0; a < ds.n_agents; ++a) {
                sum += ds.at(s, t, a, dim);
                ++count;
            }
    const double mean = sum / static_cast<double>(count);
    double var = 0.0;
    for (std::size_t s = 0; s < ds.num_sequences; ++s)
        for (std::size_t t = 0; t < ds.seq_length; ++t)
            for (std::size_t a = 0; a < ds.n_agents; ++a) {
                const double e = ds.at(s, t, a, dim) - mean;
                var += e * e;
            }
    return {mean, var / static_cast<double>(count)};
}

}  // namespace

TEST(Standardizer, AlreadyUnitDataIsIdentity) {
    // exact sample mean 0, population variance 1 per dimension
    const Dataset ds = synthetic_dataset(
        1, 2, 1, 2, [](std::size_t, std::size_t t, std::size_t, std::size_t) {
            return t == 0 ? -1.0 : 1.0;
        });
    const Standardizer z = fit_standardizer(ds);
    EXPECT_DOUBLE_EQ(z.mean[0], 0.0);
    EXPECT_DOUBLE_EQ(z.stddev[0], 1.0);
    EXPECT_DOUBLE_EQ(z.forward1(0.37, 0), 0.37);
}

TEST(Standardizer, ConstantDimensionClampsScale) {
    const Dataset ds = synthetic_dataset(
        2, 3, 2, 2, [](std::size_t, std::size_t t, std::size_t, std::size_t k) {
            return k == 0 ? 5.0 : static_cast<double>(t);
        });
    const Standardizer z = fit_standardizer(ds);
    EXPECT_DOUBLE_EQ(z.mean[0], 5.0);
    EXPECT_DOUBLE_EQ(z.stddev[0], 1.0);  // clamped
    EXPECT_DOUBLE_EQ(z.forward1(5.0, 0), 0.0);
}

TEST(Standardizer, TwoPointSetPopulationConvention) {
    const Dataset ds = synthetic_dataset(
        1, 2, 1, 1, [](std::size_t, std::size_t t, std::size_t, std::size_t) {
            return t == 0 ? 1.0 : 3.0;
        });
    const Standardizer z = fit_standardizer(ds);
    EXPECT_DOUBLE_EQ(z.mean[0], 2.0);
    EXPECT_DOUBLE_EQ(z.stddev[0], 1.0);
    EXPECT_DOUBLE_EQ(z.forward1(1.0, 0), -1.0);
    EXPECT_DOUBLE_EQ(z.forward1(3.0, 0), 1.0);
}

TEST(Standardizer, FittedTransformHasUnitStatistics) {
    Rng rng(5);
    const Dataset ds = synthetic_dataset(
        3, 40, 4, 4, [&rng](std::size_t, std::size_t, std::size_t, std::size_t k) {
            return 3.0 * static_cast<double>(k + 1) + 0.5 * rng.normal();
        });
    const Standardizer z = fit_standardizer(ds);
    const Dataset std_ds = standardize_dataset(ds, z);
    for (std::size_t k = 0; k < 4; ++k) {
        const auto [mean, var] = dim_stats(std_ds, k);
        EXPECT_LT(std::abs(mean), 1e-10);
        EXPECT_LT(std::abs(var - 1.0), 1e-10);
    }
}

TEST(Standardizer, RoundTripIsIdentity) {
    Rng rng(6);
    std::vector<double> x(64);
    for (double& v : x) v = rng.uniform(-4.0, 4.0);
    Standardizer z;
    z.mean = {0.5, -2.0, 3.0, 0.0};
    z.stddev = {2.0, 0.1, 1.0, 5.0};
    std::vector<double> y = x;
    apply_standardizer(std::span<double>(y), z, TransformDirection::forward);
    apply_standardizer(std::span<double>(y), z, TransformDirection::inverse);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(y[i], x[i], 1e-12);
    // forward(mean) = 0, forward(mean + std) = 1
    EXPECT_DOUBLE_EQ(z.forward1(z.mean[2], 2), 0.0);
    EXPECT_DOUBLE_EQ(z.forward1(z.mean[2] + z.stddev[2], 2), 1.0);
}

TEST(Standardizer, EmptyDatasetRejected) {
    Dataset ds;
    EXPECT_THROW(fit_standardizer(ds), std::invalid_argument);
    std::vector<double> buf(4);
    Standardizer unfitted;
    EXPECT_THROW(unfitted.forward(std::span<double>(buf)), std::runtime_error);
}

TEST(Standardizer, DimensionMismatchRejected) {
    Standardizer z;
    z.mean = {0.0, 0.0};
    z.stddev = {1.0, 1.0};
    std::vector<double> buf(3);
    EXPECT_THROW(z.forward(std::span<double>(buf)), std::invalid_argument);
}

TEST(GaussianNoise, ZeroScaleIsIdentity) {
    Rng rng(7);
    const Dataset ds = synthetic_dataset(
        2, 10, 2, 2, [&rng](std::size_t, std::size_t, std::size_t, std::size_t) {
            return rng.uniform(-1.0, 1.0);
        });
    const Dataset noisy = add_gaussian_noise(ds, 0.0, 9);
    EXPECT_EQ(noisy.states, ds.states);
}

TEST(GaussianNoise, SameSeedBitwiseIdentical) {
    Rng rng(8);
    const Dataset ds = synthetic_dataset(
        3, 10, 2, 2, [&rng](std::size_t, std::size_t, std::size_t, std::size_t) {
            return rng.uniform(-1.0, 1.0);
        });
    const Dataset a = add_gaussian_noise(ds, 0.05, 13);
    const Dataset b = add_gaussian_noise(ds, 0.05, 13);
    EXPECT_EQ(a.states, b.states);
    const Dataset c = add_gaussian_noise(ds, 0.05, 14);
    EXPECT_NE(a.states, c.states);
}

TEST(GaussianNoise, EmpiricalStdMatchesTarget) {
    Rng rng(9);
    // dim 0 has std ~3, dim 1 has std ~0.5; 2*500*100 = 100000 values per dim
    const Dataset ds = synthetic_dataset(
        2, 500, 100, 2, [&rng](std::size_t, std::size_t, std::size_t, std::size_t k) {
            return (k == 0 ? 3.0 : 0.5) * rng.normal();
        });
    const Standardizer clean_stats = fit_standardizer(ds);
    const double sigma_scale = 0.01;
    const Dataset noisy = add_gaussian_noise(ds, sigma_scale, 4);
    for (std::size_t k = 0; k < 2; ++k) {
        double acc = 0.0, acc2 = 0.0;
        std::size_t count = 0;
        for (std::size_t s = 0; s < ds.num_sequences; ++s)
            for (std::size_t t = 0; t < ds.seq_length; ++t)
                for (std::size_t a = 0; a < ds.n_agents; ++a) {
                    const double e = noisy.at(s, t, a, k) - ds.at(s, t, a, k);
                    acc += e;
                    acc2 += e * e;
                    ++count;
                }
        const double mean = acc / static_cast<double>(count);
        const double std = std::sqrt(acc2 / static_cast<double>(count) - mean * mean);
        const double target = sigma_scale * clean_stats.stddev[k];
        EXPECT_NEAR(std / target, 1.0, 0.02);
    }
}

TEST(GaussianNoise, ShapePreservedAndSequencesIndependent) {
    Rng rng(10);
    const Dataset ds = synthetic_dataset(
        2, 20, 3, 2, [&rng](std::size_t, std::size_t, std::size_t, std::size_t) {
            return rng.uniform(-1.0, 1.0);
        });
    const Dataset noisy = add_gaussian_noise(ds, 0.1, 21);
    EXPECT_EQ(noisy.states.size(), ds.states.size());
    // the two sequences receive different noise (distinct sub-seeds)
    std::vector<double> n0, n1;
    for (std::size_t t = 0; t < 20; ++t) {
        n0.push_back(noisy.at(0, t, 0, 0) - ds.at(0, t, 0, 0));
        n1.push_back(noisy.at(1, t, 0, 0) - ds.at(1, t, 0, 0));
    }
    EXPECT_NE(n0, n1);
}

TEST(TvDifferentiate, ConstantSeriesGivesZero) {
    std::vector<double> y(80, 3.7);
    const auto u = tv_differentiate(y, 0.01, TVConfig{});
    double mx = 0.0;
    for (double v : u) mx = std::max(mx, std::abs(v));
    EXPECT_LT(mx, 1e-6);
}

TEST(TvDifferentiate, CleanRampRecoversSlope) {
    const std::size_t n = 100;
    const double dt = 0.01;
    std::vector<double> y(n);
    for (std::size_t k = 0; k < n; ++k) y[k] = 2.0 * dt * static_cast<double>(k);
    const auto u = tv_differentiate(y, dt, TVConfig{});
    ASSERT_EQ(u.size(), n);
    for (std::size_t k = n / 10; k < n - n / 10; ++k)
        EXPECT_NEAR(u[k], 2.0, 0.02) << "index " << k;  // within 1% away from endpoints
}

TEST(TvDifferentiate, NoisyRampBeatsNaiveDifferencing) {
    const std::size_t n = 100;
    const double dt = 0.01;
    for (std::uint64_t seed : {2ull, 3ull, 5ull}) {
        Rng rng(seed);
        std::vector<double> y(n);
        for (std::size_t k = 0; k < n; ++k)
            y[k] = 2.0 * dt * static_cast<double>(k) + 0.05 * rng.normal();
        const auto u = tv_differentiate(y, dt, TVConfig{});
        double tv_err = 0.0, naive_err = 0.0;
        for (std::size_t k = 0; k < n; ++k) tv_err += std::abs(u[k] - 2.0);
        tv_err /= static_cast<double>(n);
        for (std::size_t k = 0; k + 1 < n; ++k)
            naive_err += std::abs((y[k + 1] - y[k]) / dt - 2.0);
        naive_err /= static_cast<double>(n - 1);
        EXPECT_LT(tv_err, 0.1) << "seed " << seed;      // < 5% of the slope
        EXPECT_GT(naive_err, 1.0) << "seed " << seed;   // naive errs > 50%
    }
}

// Independent oracle: the smoothed objective evaluated with its own
// trapezoid/difference code must not increase with the iteration budget.
TEST(TvDifferentiate, ObjectiveNonIncreasingAcrossIterations) {
    const std::size_t n = 120;
    const double dt = 0.01;
    Rng rng(11);
    std::vector<double> y(n);
    for (std::size_t k = 0; k < n; ++k)
        y[k] = std::sin(3.0 * dt * static_cast<double>(k)) + 0.02 * rng.normal();
    auto objective = [&](const std::vector<double>& u) {
        const TVConfig cfg;
        double tv = 0.0;
        for (std::size_t k = 0; k + 1 < n; ++k) {
            const double d = (u[k + 1] - u[k]) / dt;
            tv += std::sqrt(d * d + cfg.eps * cfg.eps);
        }
        double data = 0.0;
        double cum = 0.0;
        for (std::size_t k = 1; k < n; ++k) {
            cum += 0.5 * dt * (u[k - 1] + u[k]);
            const double r = cum - (y[k] - y[0]);
            data += r * r;
        }
        return cfg.alpha * tv + 0.5 * data;
    };
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t iters : {1u, 2u, 5u, 10u, 25u, 50u, 100u, 200u}) {
        TVConfig cfg;
        cfg.iterations = iters;
        const double obj = objective(tv_differentiate(y, dt, cfg));
        EXPECT_LE(obj, prev + 1e-12) << "iterations " << iters;
        prev = obj;
    }
}

TEST(TvDifferentiate, ShortSeriesRejected) {
    EXPECT_THROW(tv_differentiate({1.0, 2.0}, 0.01, TVConfig{}), std::invalid_argument);
    TVConfig bad;
    bad.alpha = 0.0;
    EXPECT_THROW(tv_differentiate({1.0, 2.0, 3.0}, 0.01, bad), std::invalid_argument);
}

TEST(PrepareNoisyStates, ConstantVelocityRecovered) {
    PositionSeries ps;
    ps.n_agents = 2;
    ps.pos_dim = 2;
    ps.length = 50;
    ps.values.resize(ps.length * 2 * 2);
    const double vel[2][2] = {{0.7, -0.3}, {-1.2, 0.5}};
    for (std::size_t t = 0; t < ps.length; ++t)
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t k = 0; k < 2; ++k)
                ps.values[(t * 2 + a) * 2 + k] = vel[a][k] * 0.01 * static_cast<double>(t);
    const PreparedStates prep = prepare_noisy_states(ps, 0.01, TVConfig{}, PrepareMode::training);
    EXPECT_EQ(prep.state_dim, 4u);
    for (std::size_t t = 5; t < 45; ++t)
        for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t k = 0; k < 2; ++k) {
                const double v = prep.states[(t * 2 + a) * 4 + 2 + k];
                EXPECT_NEAR(v, vel[a][k], 0.01 * std::abs(vel[a][k]) + 1e-9);
            }
}

TEST(PrepareNoisyStates, ZeroMotionGivesZeroVelocity) {
    PositionSeries ps;
    ps.n_agents = 1;
    ps.pos_dim = 2;
    ps.length = 30;
    ps.values.assign(ps.length * 2, 1.5);
    const PreparedStates prep = prepare_noisy_states(ps, 0.01, TVConfig{}, PrepareMode::training);
    for (std::size_t t = 0; t < ps.length; ++t)
        for (std::size_t k = 0; k < 2; ++k)
            EXPECT_LT(std::abs(prep.states[t * 4 + 2 + k]), 1e-6);
    // positions pass through unchanged
    EXPECT_DOUBLE_EQ(prep.states[0], 1.5);
}

TEST(PrepareNoisyStates, EvaluationModeNeedsExactPrefix) {
    PositionSeries ps;
    ps.n_agents = 1;
    ps.pos_dim = 1;
    ps.length = 15;
    ps.values.assign(15, 0.0);
    EXPECT_THROW(prepare_noisy_states(ps, 0.01, TVConfig{}, PrepareMode::evaluation),
                 std::invalid_argument);
    ps.length = 16;
    ps.values.assign(16, 0.0);
    const PreparedStates prep =
        prepare_noisy_states(ps, 0.01, TVConfig{}, PrepareMode::evaluation);
    EXPECT_EQ(prep.length, 16u);
    EXPECT_EQ(prep.last_state().size(), 2u);
}

TEST(MakeNoisyObservationDataset, VelocitiesRebuiltFromPositions) {
    // constant-velocity trajectories: TV velocities should match the truth
    const double v0 = 0.8, v1 = -0.4;
    const Dataset clean = synthetic_dataset(
        2, 60, 2, 4, [&](std::size_t, std::size_t t, std::size_t a, std::size_t k) {
            const double vv = a == 0 ? v0 : v1;
            if (k < 2) return vv * 0.01 * static_cast<double>(t);
            return vv;
        });
    const Dataset noisy = make_noisy_observation_dataset(clean, 0.0, 1, TVConfig{});
    for (std::size_t t = 5; t < 55; ++t) {
        EXPECT_NEAR(noisy.at(0, t, 0, 2), v0, 0.01 * std::abs(v0) + 1e-9);
        EXPECT_NEAR(noisy.at(0, t, 1, 2), v1, 0.01 * std::abs(v1) + 1e-9);
    }
    // position channels pass through (no noise here)
    EXPECT_DOUBLE_EQ(noisy.at(0, 10, 0, 0), clean.at(0, 10, 0, 0));
}
