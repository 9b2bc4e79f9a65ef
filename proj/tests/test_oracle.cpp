#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dfm/oracle.hpp"

using namespace dfm;

namespace {

Mat row_matrix(std::vector<double> vals) {
    Mat m(1, static_cast<int>(vals.size()));
    for (int k = 0; k < m.cols(); ++k) m(0, k) = vals[static_cast<size_t>(k)];
    return m;
}

double row_sum(const Mat& m, int r) {
    double s = 0.0;
    for (int k = 0; k < m.cols(); ++k) s += m(r, k);
    return s;
}

}  // namespace

TEST_CASE("posterior is uniform under full symmetry") {
    // uniform p1 over K=3 singleton sequences, state equidistant from all vertices
    ToyDistribution dist(1, 3, {1.0 / 3, 1.0 / 3, 1.0 / 3});
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    const Mat x = row_matrix({0.4, 0.4, 0.4});
    const Mat post = posterior_denoiser(dist, sched, noise, x, 0.5);
    for (int k = 0; k < 3; ++k) CHECK(post(0, k) == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("posterior matches two-outcome Bayes") {
    // K=2, L=1, uniform p1, alpha=beta=0.5, std=1, x=(0.5, 0):
    // brute-force Bayes over the two outcomes.
    ToyDistribution dist(1, 2, {0.5, 0.5});
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    const Mat x = row_matrix({0.5, 0.0});
    const double t = 0.5;

    auto gauss_loglik = [&](int target) {
        double d2 = 0.0;
        for (int k = 0; k < 2; ++k) {
            const double diff = x(0, k) - (k == target ? 0.5 : 0.0);
            d2 += diff * diff;
        }
        return -d2 / (2.0 * 0.25);
    };
    const double w0 = std::exp(gauss_loglik(0)), w1 = std::exp(gauss_loglik(1));
    const double expected = w0 / (w0 + w1);
    CHECK(expected == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));

    const Mat post = posterior_denoiser(dist, sched, noise, x, t);
    CHECK(post(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("posterior collapses to the nearest vertex as t -> 1") {
    Rng rng(2);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 4, rng);
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    const double t = 1.0 - 1e-4;  // alpha_t = 1e-4
    const auto [a, b] = sched.alpha_beta(t);
    Mat x = row_matrix({0.01, b + a * 0.02, -0.01, 0.0});  // near vertex e_1
    const Mat post = posterior_denoiser(dist, sched, noise, x, t);
    CHECK(post(0, 1) > 1.0 - 1e-6);

    const Mat exact = posterior_denoiser(dist, sched, noise, x, 1.0);
    CHECK(exact(0, 1) == 1.0);
}

TEST_CASE("posterior marginalizes the joint, not per-position shortcuts") {
    // p1 puts all mass on (0,1) and (1,0): positions are perfectly
    // anti-correlated, so evidence at position 0 moves position 1.
    ToyDistribution dist(2, 2, {0.0, 0.5, 0.5, 0.0});
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    Mat x(2, 2);
    x(0, 0) = 0.45;  // position 0 leans toward token 0
    x(0, 1) = 0.0;
    x(1, 0) = 0.0;  // position 1 uninformative
    x(1, 1) = 0.0;
    const Mat post = posterior_denoiser(dist, sched, noise, x, 0.5);
    CHECK(post(0, 0) > 0.5);
    CHECK(post(1, 1) == doctest::Approx(post(0, 0)).epsilon(1e-12));
}

TEST_CASE("drift at t=0 is posterior minus state") {
    Rng rng(3);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 5, rng);
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    const Mat x = sample_noise_matrix(rng, 1, 5, noise);
    const Mat post = posterior_denoiser(dist, sched, noise, x, 0.0);
    const Mat b = exact_drift(dist, sched, noise, x, 0.0);
    for (int k = 0; k < 5; ++k)
        CHECK(b(0, k) == doctest::Approx(post(0, k) - x(0, k)).epsilon(1e-12));
}

TEST_CASE("drift nearly vanishes at a support vertex late in time") {
    // At x = e_k with alpha_t small the posterior returns x itself, so for
    // the linear schedule b = ell x + lambda psi = (ell + lambda) x = 0.
    Rng rng(4);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 4, rng);
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    const double t = 0.999;
    const Mat x = row_matrix({0.0, 0.0, 1.0, 0.0});
    const Mat b = exact_drift(dist, sched, noise, x, t);
    for (int k = 0; k < 4; ++k) CHECK(std::abs(b(0, k)) < 1e-3);
}

TEST_CASE("drift matches central differences of the flow") {
    Rng rng(5);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 4, rng);
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    const Mat x = sample_noise_matrix(rng, 1, 4, noise);
    const double t = 0.4, h = 1e-4;
    const Mat fwd = integrate_flow(dist, sched, noise, x, t, t + h, 64);
    const Mat bwd = integrate_flow(dist, sched, noise, x, t, t - h, 64);
    const Mat b = exact_drift(dist, sched, noise, x, t);
    for (int k = 0; k < 4; ++k) {
        const double fd = (fwd(0, k) - bwd(0, k)) / (2.0 * h);
        CHECK(fd == doctest::Approx(b(0, k)).epsilon(1e-5));
    }
}

TEST_CASE("integrate_flow with s == t is the identity") {
    Rng rng(6);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 3, rng);
    const Mat x = sample_noise_matrix(rng, 1, 3, NoiseConfig{1.0});
    const Mat y = integrate_flow(dist, Schedule::make_linear(), NoiseConfig{1.0}, x, 0.3, 0.3, 100);
    CHECK(max_abs_diff(x, y) == 0.0);
}

TEST_CASE("integrator composes across an intermediate time") {
    Rng rng(7);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 5, rng);
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    for (int trial = 0; trial < 5; ++trial) {
        const Mat x = sample_noise_matrix(rng, 1, 5, noise);
        const Mat direct = integrate_flow(dist, sched, noise, x, 0.1, 0.9, 2000);
        const Mat mid = integrate_flow(dist, sched, noise, x, 0.1, 0.5, 2000);
        const Mat composed = integrate_flow(dist, sched, noise, mid, 0.5, 0.9, 2000);
        CHECK(max_abs_diff(direct, composed) < 1e-6);
    }
}

TEST_CASE("terminal states concentrate near simplex vertices") {
    Rng rng(8);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 5, rng);
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{0.25};
    const double t_end = 1.0 - 1e-3;
    for (int trial = 0; trial < 100; ++trial) {
        const Mat x0 = sample_noise_matrix(rng, 1, 5, noise);
        const Mat xt = integrate_flow(dist, sched, noise, x0, 0.0, t_end, 400);
        double best = 1e300;
        for (int k = 0; k < 5; ++k) {
            double dist_inf = 0.0;
            for (int j = 0; j < 5; ++j)
                dist_inf = std::max(dist_inf, std::abs(xt(0, j) - (j == k ? 1.0 : 0.0)));
            best = std::min(best, dist_inf);
        }
        CHECK(best < 2e-3);
    }
}

TEST_CASE("mean denoiser approaches the posterior as t -> s") {
    // The gap between psi_{s,s+eps} and the posterior is first order in eps
    // (the window averages the posterior over [s, s+eps]), so the limit value
    // is pinned by Richardson extrapolation at eps = 1e-3.
    Rng rng(9);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 4, rng);
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    for (double s : {0.1, 0.45, 0.8}) {
        const Mat x0 = sample_noise_matrix(rng, 1, 4, noise);
        const auto target = dist.sample(rng);
        const Mat x = make_interpolant(target, x0, sched, s).x;
        const Mat post = posterior_denoiser(dist, sched, noise, x, s);
        const double eps = 1e-3;
        const Mat full = exact_mean_denoiser(dist, sched, noise, x, s, s + eps, 64);
        const Mat half = exact_mean_denoiser(dist, sched, noise, x, s, s + 0.5 * eps, 64);
        // first-order convergence toward the diagonal
        const double g_full = max_abs_diff(post, full);
        const double g_half = max_abs_diff(post, half);
        if (g_full > 1e-6) CHECK(g_half / g_full == doctest::Approx(0.5).epsilon(0.1));
        // extrapolated limit hits the posterior
        const Mat limit = axby(2.0, half, -1.0, full);
        CHECK(max_abs_diff(post, limit) < 1e-4);
    }
}

TEST_CASE("mean denoiser rows live on the simplex") {
    Rng rng(10);
    ToyDistribution dist = ToyDistribution::random_full_support(2, 3, rng);
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    for (int trial = 0; trial < 100; ++trial) {
        const double s = 0.85 * rng.uniform();
        const double t = s + 0.05 + (0.92 - s - 0.05) * rng.uniform();
        const Mat x0 = sample_noise_matrix(rng, 2, 3, noise);
        const auto target = dist.sample(rng);
        const Mat x = make_interpolant(target, x0, sched, s).x;
        const Mat psi = exact_mean_denoiser(dist, sched, noise, x, s, t, 200);
        for (int l = 0; l < 2; ++l) {
            CHECK(std::abs(row_sum(psi, l) - 1.0) < 1e-6);
            for (int k = 0; k < 3; ++k) CHECK(psi(l, k) >= 0.0);
        }
    }
}

TEST_CASE("flow map reconstruction: Gamma x + Xi psi equals the integrated state") {
    Rng rng(11);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 5, rng);
    const Schedule sched = Schedule::make_linear();
    const NoiseConfig noise{1.0};
    for (int trial = 0; trial < 20; ++trial) {
        const double s = 0.8 * rng.uniform();
        const double t = s + 0.05 + (0.95 - s - 0.05) * rng.uniform();
        const Mat x = sample_noise_matrix(rng, 1, 5, noise);
        const auto fm = flow_and_mean(dist, sched, noise, x, s, t, 2000);
        const CoefficientSet c = sched.coeffs(s, t);
        const Mat recon = axby(c.gamma, x, c.xi, fm.psi);
        CHECK(max_abs_diff(recon, fm.x_t) < 1e-4);
    }
}

TEST_CASE("interpolant sample is exact and toy file round trips") {
    Rng rng(12);
    ToyDistribution dist = ToyDistribution::random_full_support(2, 3, rng);
    const Schedule sched = Schedule::make_linear();
    const Mat x0 = sample_noise_matrix(rng, 2, 3, NoiseConfig{1.0});
    const auto target = dist.sample(rng);
    const InterpolantSample smp = make_interpolant(target, x0, sched, 0.3);
    for (int l = 0; l < 2; ++l)
        for (int k = 0; k < 3; ++k) {
            const double expect =
                0.7 * x0(l, k) + (k == target[static_cast<size_t>(l)] ? 0.3 : 0.0);
            CHECK(smp.x(l, k) == expect);
        }

    dist.save("toy_roundtrip.txt");
    const ToyDistribution back = ToyDistribution::load("toy_roundtrip.txt");
    REQUIRE(back.num_sequences() == dist.num_sequences());
    for (size_t i = 0; i < dist.num_sequences(); ++i) CHECK(back.prob(i) == dist.prob(i));
}

TEST_CASE("toy distribution enumeration helpers") {
    ToyDistribution dist(2, 3, std::vector<double>(9, 1.0 / 9));
    CHECK(dist.index_of({1, 2}) == 5);
    CHECK(dist.tokens_of(5) == std::vector<int>{1, 2});
    const auto m = dist.marginal(0);
    for (double v : m) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));
    CHECK_THROWS(ToyDistribution(2, 3, std::vector<double>(9, 1.0)));
}
