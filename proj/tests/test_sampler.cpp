#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dfm/eval.hpp"
#include "dfm/sampler.hpp"

using namespace dfm;

namespace {

ModelArch arch_for(int L, int K, bool conditional = false) {
    ModelArch a;
    a.hidden_width = 16;
    a.n_layers = 2;
    a.seq_len = L;
    a.vocab_size = K;
    a.conditional = conditional;
    return a;
}

}  // namespace

TEST_CASE("sample_noise is reproducible and scales with std") {
    Rng a(5), b(5);
    const Mat m1 = sample_noise(a, 3, 4, NoiseConfig{1.0});
    const Mat m2 = sample_noise(b, 3, 4, NoiseConfig{1.0});
    CHECK(max_abs_diff(m1, m2) == 0.0);

    Rng c(6);
    const int n = 100000;
    double sum = 0.0, sumsq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = c.normal(0.0, 1.0);
        sum += v;
        sumsq += v * v;
    }
    CHECK(std::abs(sum / n) < 3.0 / std::sqrt(static_cast<double>(n)));
    const double std1 = std::sqrt(sumsq / n);

    Rng d(6);
    double sumsq_half = 0.0;
    for (int i = 0; i < n; ++i) {
        const double v = d.normal(0.0, 0.5);
        sumsq_half += v * v;
    }
    CHECK(std::sqrt(sumsq_half / n) == doctest::Approx(0.5 * std1).epsilon(1e-12));
}

TEST_CASE("flow_map_step at t=1 returns the denoiser output exactly") {
    const DenoiserModel m(arch_for(2, 4), Schedule::make_linear(), 3);
    ModelSource src(m);
    Rng rng(1);
    const Mat x = sample_noise(rng, 2, 4, NoiseConfig{1.0});
    const Mat out = flow_map_step(src, x, 0.0, 1.0);
    CHECK(max_abs_diff(out, m.psi(x, 0.0, 1.0)) == 0.0);
    for (int l = 0; l < 2; ++l) {
        double sum = 0.0;
        for (int k = 0; k < 4; ++k) {
            CHECK(out(l, k) >= 0.0);
            sum += out(l, k);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("flow_map_step near the diagonal is near the identity") {
    const DenoiserModel m(arch_for(1, 4), Schedule::make_linear(), 4);
    ModelSource src(m);
    Rng rng(2);
    const Mat x = sample_noise(rng, 1, 4, NoiseConfig{1.0});
    const Mat out = flow_map_step(src, x, 0.5 - 1e-9, 0.5);
    CHECK(max_abs_diff(out, x) < 1e-8);
}

TEST_CASE("flow_map_step with the oracle matches the integrator") {
    Rng rng(3);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 4, rng);
    const NoiseConfig noise{1.0};
    OracleDenoiser oracle(dist, Schedule::make_linear(), noise, 2000);
    const Mat x = sample_noise(rng, 1, 4, noise);
    const Mat stepped = flow_map_step(oracle, x, 0.1, 0.8);
    const Mat integrated = integrate_flow(dist, oracle.schedule(), noise, x, 0.1, 0.8, 2000);
    CHECK(max_abs_diff(stepped, integrated) < 1e-4);
}

TEST_CASE("cfg_combine endpoints and extrapolation") {
    Mat cond(1, 2), uncond(1, 2);
    cond(0, 0) = 0.8;
    cond(0, 1) = 0.2;
    uncond(0, 0) = 0.5;
    uncond(0, 1) = 0.5;
    CHECK(max_abs_diff(cfg_combine(cond, uncond, 0.0), uncond) == 0.0);
    CHECK(max_abs_diff(cfg_combine(cond, uncond, 1.0), cond) == 0.0);
    const Mat two = cfg_combine(cond, uncond, 2.0);
    CHECK(two(0, 0) == doctest::Approx(1.1).epsilon(1e-15));
    CHECK(two(0, 1) == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK(decode_argmax(std::span<const double>(two.row(0), 2)) == 0);
    CHECK_THROWS_AS(cfg_combine(cond, uncond, -0.5), std::invalid_argument);
}

TEST_CASE("argmax invariance under guidance") {
    Rng rng(4);
    // omega in [0, 1]: any pair sharing an argmax keeps it (convexity)
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> zc(4), zu(4);
        for (auto& v : zc) v = rng.normal(0.0, 2.0);
        const auto pc = softmax(zc);
        const int top = decode_argmax(pc);
        for (auto& v : zu) v = rng.normal(0.0, 2.0);
        auto pu = softmax(zu);
        std::swap(pu[static_cast<size_t>(decode_argmax(pu))], pu[static_cast<size_t>(top)]);
        Mat c(1, 4), u(1, 4);
        for (int k = 0; k < 4; ++k) {
            c(0, k) = pc[static_cast<size_t>(k)];
            u(0, k) = pu[static_cast<size_t>(k)];
        }
        const double omega = rng.uniform();
        const Mat g = cfg_combine(c, u, omega);
        CHECK(decode_argmax(std::span<const double>(g.row(0), 4)) == top);
    }
    // any omega >= 0: invariance when the conditional margins dominate
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> zu(4);
        for (auto& v : zu) v = rng.normal(0.0, 1.0);
        const auto pu = softmax(zu);
        const int top = decode_argmax(pu);
        Mat u(1, 4), c(1, 4);
        double boost = 0.0;
        for (int k = 0; k < 4; ++k) {
            u(0, k) = pu[static_cast<size_t>(k)];
            if (k != top) {
                const double shave = pu[static_cast<size_t>(k)] * rng.uniform();
                c(0, k) = pu[static_cast<size_t>(k)] - shave;
                boost += shave;
            }
        }
        c(0, top) = pu[static_cast<size_t>(top)] + boost;  // every margin widened
        const double omega = 4.0 * rng.uniform();
        const Mat g = cfg_combine(c, u, omega);
        CHECK(decode_argmax(std::span<const double>(g.row(0), 4)) == top);
    }
}

TEST_CASE("nfe=1 generation is the argmax of the one-jump denoiser") {
    const DenoiserModel m(arch_for(2, 4), Schedule::make_linear(), 7);
    SamplerConfig cfg;
    cfg.nfe = 1;
    cfg.seed = 11;
    Rng rng(99);
    const auto tokens = generate(m.schedule(), model_psi(m), 2, 4, cfg, rng);
    Rng replay(99);
    const Mat x0 = sample_noise(replay, 2, 4, NoiseConfig{1.0});
    const Mat psi = m.psi(x0, 0.0, 1.0);
    for (int l = 0; l < 2; ++l)
        CHECK(tokens[static_cast<size_t>(l)] ==
              decode_argmax(std::span<const double>(psi.row(l), 4)));
}

TEST_CASE("generation is deterministic under a fixed seed") {
    const DenoiserModel m(arch_for(2, 4), Schedule::make_linear(), 8);
    SamplerConfig cfg;
    cfg.nfe = 4;
    cfg.seed = 21;
    const auto a = generate_many(m.schedule(), model_psi(m), 2, 4, cfg, 32);
    const auto b = generate_many(m.schedule(), model_psi(m), 2, 4, cfg, 32);
    CHECK(a == b);
}

TEST_CASE("oracle-backed sampler reproduces the toy distribution") {
    Rng rng(17);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 5, rng);
    const NoiseConfig noise{1.0};
    OracleDenoiser oracle(dist, Schedule::make_linear(), noise, 8);
    SamplerConfig cfg;
    cfg.nfe = 256;
    cfg.seed = 5;
    const auto samples = generate_many(oracle.schedule(), oracle_psi(oracle), 1, 5, cfg, 20000);
    CHECK(tv_distance(samples, dist) < 0.03);
}

TEST_CASE("refining the sampler grid barely moves the terminal distribution") {
    Rng rng(18);
    ToyDistribution dist = ToyDistribution::random_full_support(1, 5, rng);
    const NoiseConfig noise{1.0};
    OracleDenoiser oracle(dist, Schedule::make_linear(), noise, 16);
    SamplerConfig coarse;
    coarse.nfe = 4;
    coarse.seed = 9;
    SamplerConfig fine = coarse;
    fine.nfe = 8;  // refinement of the same uniform grid, common noise draws
    const auto a = generate_many(oracle.schedule(), oracle_psi(oracle), 1, 5, coarse, 4000);
    const auto b = generate_many(oracle.schedule(), oracle_psi(oracle), 1, 5, fine, 4000);
    std::vector<double> pa(5, 0.0), pb(5, 0.0);
    for (const auto& s : a) pa[static_cast<size_t>(s[0])] += 1.0 / a.size();
    for (const auto& s : b) pb[static_cast<size_t>(s[0])] += 1.0 / b.size();
    CHECK(tv_between(pa, pb) < 0.02);
}

TEST_CASE("block generation composes conditional blocks") {
    const DenoiserModel m(arch_for(4, 5, true), Schedule::make_linear(), 12);
    SamplerConfig cfg;
    cfg.nfe = 2;
    cfg.n_blocks = 3;
    cfg.guidance_omega = 1.0;
    Rng rng(31);
    const TokenSeq out = block_generate(m, {1, 2}, cfg, rng);
    CHECK(out.tokens.size() == 12);
    CHECK(out.context == std::vector<int>{1, 2});

    // single block equals one conditional generate with the same rng stream
    Rng r1(32), r2(32);
    SamplerConfig one = cfg;
    one.n_blocks = 1;
    const std::vector<int> prompt{3};
    const TokenSeq blk = block_generate(m, prompt, one, r1);
    const auto direct = generate(m.schedule(), model_psi(m, &prompt), 4, 5, one, r2);
    CHECK(blk.tokens == direct);
}

TEST_CASE("block generation with an empty prompt is the unconditional sampler") {
    const DenoiserModel m(arch_for(3, 4, true), Schedule::make_linear(), 13);
    SamplerConfig cfg;
    cfg.nfe = 2;
    cfg.n_blocks = 1;
    Rng r1(41), r2(41);
    const TokenSeq blk = block_generate(m, {}, cfg, r1);
    const auto direct = generate(m.schedule(), model_psi(m, nullptr), 3, 4, cfg, r2);
    CHECK(blk.tokens == direct);
}

TEST_CASE("block generation rejects oversized contexts") {
    ModelArch a = arch_for(4, 4, true);
    a.max_context = 8;
    const DenoiserModel m(a, Schedule::make_linear(), 14);
    SamplerConfig cfg;
    cfg.nfe = 1;
    cfg.n_blocks = 4;  // context grows 4 -> 8 -> 12 > 8
    Rng rng(51);
    CHECK_THROWS_AS(block_generate(m, {0, 0, 0, 0, 0}, cfg, rng), std::invalid_argument);
}

TEST_CASE("sampling times honor the beta-uniform grid") {
    Rng rng(19);
    const Schedule sched = Schedule::make_blended_argmax(0.9, 6, 1.0, 20000, 128, rng);
    const auto times = sampling_times(sched, 8, TimeGrid::UniformBeta);
    CHECK(times.front() == 0.0);
    CHECK(times.back() == 1.0);
    for (size_t i = 1; i + 1 < times.size(); ++i) {
        const double expected = static_cast<double>(i) / 8;
        CHECK(sched.beta(times[i]) == doctest::Approx(expected).epsilon(1e-6));
    }
    const auto uniform = sampling_times(sched, 4, TimeGrid::UniformT);
    for (size_t i = 0; i < uniform.size(); ++i)
        CHECK(uniform[i] == doctest::Approx(0.25 * static_cast<double>(i)).epsilon(1e-15));
}
