#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "dfm/eval.hpp"
#include "dfm/trainer.hpp"

using namespace dfm;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Config base_config(int seq_len, int vocab, int steps, uint64_t seed) {
    Config cfg;
    cfg.set_int("model.seq_len", seq_len);
    cfg.set_int("model.vocab_size", vocab);
    cfg.set_int("model.hidden_width", 32);
    cfg.set_int("model.n_layers", 2);
    cfg.set("schedule.kind", "linear");
    cfg.set_int("train.steps", steps);
    cfg.set_int("train.batch_size", 64);
    cfg.set_double("train.lr", 3e-4);
    cfg.set_int("train.warmup_steps", 500);
    cfg.set_int("train.seed", static_cast<long long>(seed));
    cfg.set_int("train.log_every", 0);
    return cfg;
}

}  // namespace

TEST_CASE("sorted time samples stay ordered and pairs are almost surely strict") {
    Rng rng(1);
    for (int trial = 0; trial < 10000; ++trial) {
        const auto [s, u, t] = sample_times_triple(rng);
        CHECK(s <= u);
        CHECK(u <= t);
        const auto [a, b] = sample_times_pair(rng);
        CHECK(a <= b);
        CHECK(a != b);  // continuous draws collide with probability zero
    }
}

TEST_CASE("middle order statistic of the triple follows Beta(2,2)") {
    Rng rng(2);
    const int n = 100000;
    std::vector<double> mids(n);
    for (auto& v : mids) v = sample_times_triple(rng)[1];
    std::sort(mids.begin(), mids.end());
    double ks = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = mids[static_cast<size_t>(i)];
        const double cdf = 3.0 * u * u - 2.0 * u * u * u;
        const double emp_hi = static_cast<double>(i + 1) / n;
        const double emp_lo = static_cast<double>(i) / n;
        ks = std::max({ks, std::abs(emp_hi - cdf), std::abs(emp_lo - cdf)});
    }
    CHECK(ks < 0.01);
}

TEST_CASE("adam leaves parameters alone for zero gradients") {
    std::vector<double> params{1.0, -2.0, 3.0};
    const std::vector<double> before = params;
    AdamState state;
    TrainConfig tc;
    tc.warmup_steps = 0;
    CHECK(adam_step(params, state, {0.0, 0.0, 0.0}, 1, tc));
    CHECK(params == before);
}

TEST_CASE("first adam step moves a scalar by about lr") {
    std::vector<double> params{0.0};
    AdamState state;
    TrainConfig tc;
    tc.lr = 1e-3;
    tc.warmup_steps = 0;
    CHECK(adam_step(params, state, {0.5}, 1, tc));
    // m-hat = g, v-hat = g^2: update = -lr g / (|g| + eps)
    CHECK(params[0] == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("warmup ramps the learning rate linearly") {
    TrainConfig tc;
    tc.lr = 1e-2;
    tc.warmup_steps = 100;
    for (long long k : {1LL, 25LL, 80LL}) {
        std::vector<double> params{0.0};
        AdamState state;
        adam_step(params, state, {1.0}, k, tc);
        const double expected = -tc.lr * static_cast<double>(k) / 100.0;
        CHECK(params[0] == doctest::Approx(expected).epsilon(1e-6));
    }
}

TEST_CASE("adam rejects non-finite gradients") {
    std::vector<double> params{1.0};
    AdamState state;
    TrainConfig tc;
    CHECK_FALSE(adam_step(params, state, {std::nan("")}, 1, tc));
    CHECK(params[0] == 1.0);
}

TEST_CASE("zero-step training returns the seeded initialization") {
    Rng rng(3);
    ToyData data(ToyDistribution::random_full_support(1, 3, rng));
    const Config cfg = base_config(1, 3, 0, 7);
    const TrainOutcome out = train_diagonal(cfg, data, nullptr);
    const DenoiserModel fresh(arch_from_config(out.checkpoint.config), Schedule::make_linear(), 7);
    CHECK(out.checkpoint.params == fresh.params());
    CHECK(out.checkpoint.step == 0);
}

TEST_CASE("training is deterministic for a fixed seed") {
    Rng rng(4);
    const ToyDistribution dist = ToyDistribution::random_full_support(1, 3, rng);
    ToyData data(dist);
    const Config cfg = base_config(1, 3, 200, 11);
    const TrainOutcome a = train_diagonal(cfg, data, nullptr);
    const TrainOutcome b = train_diagonal(cfg, data, nullptr);
    CHECK(a.checkpoint.params == b.checkpoint.params);
    CHECK(a.stats.loss_ema == b.stats.loss_ema);
}

TEST_CASE("diagonal training closes in on the exact posterior") {
    Rng rng(5);
    const ToyDistribution dist = ToyDistribution::random_full_support(1, 3, rng);
    ToyData data(dist);
    Config cfg = base_config(1, 3, 5000, 13);
    const TrainOutcome out = train_diagonal(cfg, data, nullptr);
    CHECK_FALSE(out.stats.aborted);
    CHECK(out.stats.probe_tv >= 0.0);
    CHECK(out.stats.probe_tv < 0.05);
}

TEST_CASE("zero-step distillation keeps the initial parameters") {
    Rng rng(6);
    ToyData data(ToyDistribution::random_full_support(1, 3, rng));
    Config cfg = base_config(1, 3, 300, 17);
    const TrainOutcome diag = train_diagonal(cfg, data, nullptr);
    Config dcfg = cfg;
    dcfg.set_int("train.steps", 0);
    const TrainOutcome dist_out = distill(dcfg, &diag.checkpoint, LossKind::Psd, data, nullptr);
    CHECK(dist_out.checkpoint.params == diag.checkpoint.params);
}

TEST_CASE("short psd distillation runs and does not wreck the diagonal") {
    Rng rng(7);
    ToyData data(ToyDistribution::random_full_support(1, 3, rng));
    Config cfg = base_config(1, 3, 1500, 19);
    const TrainOutcome diag = train_diagonal(cfg, data, nullptr);
    Config dcfg = cfg;
    dcfg.set_int("train.steps", 300);
    const TrainOutcome out = distill(dcfg, &diag.checkpoint, LossKind::Psd, data, nullptr);
    CHECK_FALSE(out.stats.aborted);
    CHECK(out.stats.probe_tv >= 0.0);
    CHECK(out.stats.initial_probe_tv >= 0.0);
    CHECK(out.stats.probe_tv <= 2.0 * out.stats.initial_probe_tv + 1e-9);
}

TEST_CASE("checkpoint save-load-save produces identical bytes") {
    Rng rng(8);
    ToyData data(ToyDistribution::random_full_support(1, 3, rng));
    const Config cfg = base_config(1, 3, 50, 23);
    const TrainOutcome out = train_diagonal(cfg, data, nullptr);
    out.checkpoint.save("ck_a.bin");
    const Checkpoint loaded = Checkpoint::load("ck_a.bin");
    loaded.save("ck_b.bin");
    CHECK(slurp("ck_a.bin") == slurp("ck_b.bin"));
    CHECK(loaded.params == out.checkpoint.params);
    CHECK(loaded.step == out.checkpoint.step);
    CHECK(loaded.rng_state == out.checkpoint.rng_state);
    CHECK(loaded.content_id() == out.checkpoint.content_id());

    const DenoiserModel restored = loaded.restore_model();
    CHECK(restored.params() == out.checkpoint.params);
    std::remove("ck_a.bin");
    std::remove("ck_b.bin");
}

TEST_CASE("checkpoint rejects corrupted magic") {
    std::ofstream("ck_bad.bin", std::ios::binary) << "NOPE garbage";
    CHECK_THROWS(Checkpoint::load("ck_bad.bin"));
    std::remove("ck_bad.bin");
}

TEST_CASE("config text round trips") {
    Config cfg;
    cfg.set("model.seq_len", "4");
    cfg.set_double("train.lr", 3e-4);
    cfg.set_bool("loss.surgery", true);
    cfg.set("data.path", "toy.txt");
    const Config back = Config::parse_text(cfg.serialize());
    CHECK(back.get_int("model.seq_len") == 4);
    CHECK(back.get_double("train.lr") == 3e-4);
    CHECK(back.get_bool_or("loss.surgery", false));
    CHECK(back.get("data.path") == "toy.txt");
    CHECK_FALSE(back.has("nope"));
    CHECK_THROWS(back.get("nope"));
}

TEST_CASE("schedule round trips through config keys") {
    Rng rng(9);
    const Schedule sched = Schedule::make_blended_argmax(0.9, 5, 1.0, 20000, 64, rng);
    Config cfg;
    schedule_to_config(sched, cfg);
    cfg.set_int("model.seq_len", 1);
    const Schedule back = schedule_from_config(cfg);
    CHECK(back.kind() == sched.kind());
    REQUIRE(back.grid_beta().size() == sched.grid_beta().size());
    for (size_t i = 0; i < sched.grid_beta().size(); ++i)
        CHECK(back.grid_beta()[i] == sched.grid_beta()[i]);
}

TEST_CASE("conditional toy data mixes contexts and honors dropout") {
    ConditionalToyData data(4, 3, 0.7, 0.25);
    Rng rng(10);
    int dropped = 0;
    const int n = 20000;
    std::vector<int> ctx_counts(4, 0);
    std::vector<int> match_counts(4, 0);
    std::vector<int> target, ctx;
    for (int i = 0; i < n; ++i) {
        data.sample(rng, target, ctx);
        REQUIRE(target.size() == 3);
        if (ctx.empty()) {
            ++dropped;
            continue;
        }
        ++ctx_counts[static_cast<size_t>(ctx[0])];
        for (int tok : target)
            if (tok == ctx[0]) ++match_counts[static_cast<size_t>(ctx[0])];
    }
    CHECK(std::abs(static_cast<double>(dropped) / n - 0.25) < 0.02);
    double match = 0.0, total = 0.0;
    for (int c = 0; c < 4; ++c) {
        match += match_counts[static_cast<size_t>(c)];
        total += 3.0 * ctx_counts[static_cast<size_t>(c)];
    }
    CHECK(std::abs(match / total - 0.7) < 0.02);

    const ToyDistribution cond = data.conditional_dist(2);
    const auto m = cond.marginal(1);
    CHECK(m[2] == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(m[0] == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("corpus data crops context and continuation windows") {
    const std::string text = "abcabcabcabcabcabcabcabcabcabc";
    CorpusData data(text, 4, 3, 0.0);
    CHECK(data.vocab_size() == 3);
    CHECK(data.charset() == "abc");
    Rng rng(11);
    std::vector<int> target, ctx;
    for (int i = 0; i < 200; ++i) {
        data.sample(rng, target, ctx);
        REQUIRE(target.size() == 4);
        REQUIRE(ctx.size() == 3);
        // windows are contiguous corpus slices: check via decode pattern
        const std::string joined = data.decode(ctx) + data.decode(target);
        CHECK(text.find(joined) != std::string::npos);
    }
    const auto bg = data.bigram_stats();
    CHECK(bg[0 * 3 + 1] > 0.3);  // a -> b dominates
    CHECK(bg[0 * 3 + 0] == 0.0);
}

TEST_CASE("probe tv is near zero for the oracle plugged in as a model") {
    // sanity: a model can't beat the posterior; the metric itself is exact at 0
    Rng rng(12);
    const ToyDistribution dist = ToyDistribution::random_full_support(1, 3, rng);
    const NoiseConfig noise{1.0};
    // evaluate probe TV of an (untrained) model: should be clearly positive
    const DenoiserModel fresh(ModelArch{16, 2, 1, 3, false, 256}, Schedule::make_linear(), 1);
    const double tv = probe_diagonal_tv(fresh, dist, noise, 99);
    CHECK(tv > 0.02);
}
