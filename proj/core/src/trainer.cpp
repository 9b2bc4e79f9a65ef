#include "dfm/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

namespace dfm {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "diag" || s == "diagonal") return LossKind::Diagonal;
    if (s == "psd") return LossKind::Psd;
    if (s == "lsd") return LossKind::Lsd;
    if (s == "esd") return LossKind::Esd;
    throw std::runtime_error("loss: unknown kind " + s);
}

std::string loss_kind_to_string(LossKind k) {
    switch (k) {
        case LossKind::Diagonal: return "diag";
        case LossKind::Psd: return "psd";
        case LossKind::Lsd: return "lsd";
        case LossKind::Esd: return "esd";
    }
    return "diag";
}

}  // namespace

LossConfig loss_from_config(const Config& cfg) {
    LossConfig loss;
    loss.kind = loss_kind_from_string(cfg.get_or("loss.kind", "diag"));
    loss.adaptive_c =
        cfg.get_double_or("loss.adaptive_c", loss.kind == LossKind::Diagonal ? 0.01 : 1e-6);
    loss.adaptive_r = cfg.get_double_or("loss.adaptive_r", 0.5);
    const std::string lw = cfg.get_or("loss.learnable_weight", "none");
    loss.learnable_weight = lw == "of_s"    ? LearnableWeightMode::OfS
                            : lw == "of_st" ? LearnableWeightMode::OfSt
                                            : LearnableWeightMode::None;
    loss.surgery = cfg.get_bool_or("loss.surgery", loss.kind == LossKind::Psd);
    loss.reverse_kl = cfg.get_bool_or("loss.reverse_kl", false);
    loss.stabilized_teachers = cfg.get_bool_or("loss.stabilized", true);
    return loss;
}

void loss_to_config(const LossConfig& loss, Config& cfg) {
    cfg.set("loss.kind", loss_kind_to_string(loss.kind));
    cfg.set_double("loss.adaptive_c", loss.adaptive_c);
    cfg.set_double("loss.adaptive_r", loss.adaptive_r);
    cfg.set("loss.learnable_weight", loss.learnable_weight == LearnableWeightMode::OfS ? "of_s"
                                     : loss.learnable_weight == LearnableWeightMode::OfSt
                                         ? "of_st"
                                         : "none");
    cfg.set_bool("loss.surgery", loss.surgery);
    cfg.set_bool("loss.reverse_kl", loss.reverse_kl);
    cfg.set_bool("loss.stabilized", loss.stabilized_teachers);
}

TrainConfig train_from_config(const Config& cfg) {
    TrainConfig tc;
    tc.batch_size = static_cast<int>(cfg.get_int_or("train.batch_size", 64));
    tc.steps = static_cast<int>(cfg.get_int_or("train.steps", 20000));
    tc.lr = cfg.get_double_or("train.lr", 3e-4);
    tc.warmup_steps = static_cast<int>(cfg.get_int_or("train.warmup_steps", 2500));
    tc.adam_beta1 = cfg.get_double_or("train.adam_beta1", 0.9);
    tc.adam_beta2 = cfg.get_double_or("train.adam_beta2", 0.999);
    tc.adam_eps = cfg.get_double_or("train.adam_eps", 1e-8);
    tc.noise_std = cfg.get_double_or("train.noise_std", 1.0);
    tc.seed = static_cast<uint64_t>(cfg.get_int_or("train.seed", 0));
    tc.log_every = static_cast<int>(cfg.get_int_or("train.log_every", 1000));
    tc.loss = loss_from_config(cfg);
    if (tc.lr <= 0.0) throw std::runtime_error("train: lr must be > 0");
    if (tc.batch_size < 1) throw std::runtime_error("train: batch_size must be >= 1");
    if (tc.warmup_steps < 0) throw std::runtime_error("train: warmup_steps must be >= 0");
    return tc;
}

double sample_times_diag(Rng& rng) { return rng.uniform(); }

std::pair<double, double> sample_times_pair(Rng& rng) {
    double a = rng.uniform(), b = rng.uniform();
    if (a > b) std::swap(a, b);
    return {a, b};
}

std::array<double, 3> sample_times_triple(Rng& rng) {
    std::array<double, 3> v{rng.uniform(), rng.uniform(), rng.uniform()};
    std::sort(v.begin(), v.end());
    return v;
}

bool adam_step(std::vector<double>& params, AdamState& state, const std::vector<double>& grad,
               long long step_index, const TrainConfig& cfg) {
    if (grad.size() != params.size()) throw std::invalid_argument("adam_step: size mismatch");
    for (double g : grad)
        if (!std::isfinite(g)) return false;
    if (state.m.size() != params.size()) state.m.assign(params.size(), 0.0);
    if (state.v.size() != params.size()) state.v.assign(params.size(), 0.0);

    const double warm =
        cfg.warmup_steps > 0
            ? std::min(1.0, static_cast<double>(step_index) / cfg.warmup_steps)
            : 1.0;
    const double lr = cfg.lr * warm;
    const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_index));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_index));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
    return true;
}

double probe_diagonal_tv(const DenoiserModel& model, const ToyDistribution& dist,
                         const NoiseConfig& noise, uint64_t seed, int n_times, int n_states) {
    const Schedule& sched = model.schedule();
    double total = 0.0;
    int count = 0;
    for (int it = 0; it < n_times; ++it) {
        const double t = 0.05 + 0.9 * it / (n_times - 1);
        for (int is = 0; is < n_states; ++is) {
            Rng rng(seed, static_cast<uint64_t>(it) * 1000 + static_cast<uint64_t>(is));
            const Mat x0 = sample_noise_matrix(rng, dist.seq_len(), dist.vocab_size(), noise);
            const auto target = dist.sample(rng);
            const Mat x = make_interpolant(target, x0, sched, t).x;
            const Mat post = posterior_denoiser(dist, sched, noise, x, t);
            const Mat psi = model.psi(x, t, t);
            for (int l = 0; l < x.rows(); ++l) {
                double tv = 0.0;
                for (int k = 0; k < x.cols(); ++k) tv += std::abs(psi(l, k) - post(l, k));
                total += 0.5 * tv;
                ++count;
            }
        }
    }
    return total / count;
}

namespace {

std::vector<DiagonalBatchItem> build_diag_batch(const DataSource& data, const Schedule& sched,
                                                const NoiseConfig& noise, int batch_size,
                                                Rng& rng) {
    std::vector<DiagonalBatchItem> batch(static_cast<size_t>(batch_size));
    for (auto& item : batch) {
        item.t = sample_times_diag(rng);
        data.sample(rng, item.target, item.context);
        const Mat x0 = sample_noise_matrix(rng, data.seq_len(), data.vocab_size(), noise);
        item.x = make_interpolant(item.target, x0, sched, item.t).x;
    }
    return batch;
}

std::vector<ConsistencyBatchItem> build_consistency_batch(const DataSource& data,
                                                          const Schedule& sched,
                                                          const NoiseConfig& noise, LossKind kind,
                                                          int batch_size, Rng& rng) {
    std::vector<ConsistencyBatchItem> batch(static_cast<size_t>(batch_size));
    std::vector<int> target;
    for (auto& item : batch) {
        if (kind == LossKind::Psd) {
            const auto [s, u, t] = sample_times_triple(rng);
            item.s = s;
            item.u = u;
            item.t = t;
        } else {
            const auto [s, t] = sample_times_pair(rng);
            item.s = s;
            item.t = t;
        }
        data.sample(rng, target, item.context);
        const Mat x0 = sample_noise_matrix(rng, data.seq_len(), data.vocab_size(), noise);
        item.x = make_interpolant(target, x0, sched, item.s).x;
    }
    return batch;
}

// Degenerate time gaps make the teachers' correction terms meaningless;
// resample the offending time with a fixed floor.
void enforce_gap(std::vector<ConsistencyBatchItem>& batch, LossKind kind) {
    constexpr double kGap = 1e-4;
    for (auto& item : batch) {
        if (kind == LossKind::Psd) {
            if (item.u - item.s < kGap) item.u = std::min(item.s + kGap, 1.0 - kGap);
            if (item.t - item.u < kGap) item.t = std::min(item.u + kGap, 1.0);
        } else if (item.t - item.s < kGap) {
            item.t = std::min(item.s + kGap, 1.0);
        }
        if (item.t <= item.s) item.s = item.t - kGap;
        if (kind == LossKind::Psd && (item.u <= item.s || item.u >= item.t))
            item.u = 0.5 * (item.s + item.t);
    }
}

Checkpoint assemble_checkpoint(const Config& run_cfg, const DenoiserModel& model,
                               const AdamState& adam, const WeightNet* wnet,
                               const AdamState* wnet_adam, uint64_t step, const Rng& rng) {
    Checkpoint ck;
    ck.config = run_cfg;
    arch_to_config(model.arch(), ck.config);
    schedule_to_config(model.schedule(), ck.config);
    ck.params = model.params();
    ck.adam_m = adam.m;
    ck.adam_v = adam.v;
    if (wnet && wnet->mode() != LearnableWeightMode::None) {
        ck.wnet_params = wnet->params();
        if (wnet_adam) {
            ck.wnet_m = wnet_adam->m;
            ck.wnet_v = wnet_adam->v;
        }
    }
    ck.step = step;
    ck.rng_state = rng.state();
    return ck;
}

}  // namespace

TrainOutcome train_diagonal(const Config& run_cfg, const DataSource& data, std::ostream* log) {
    const TrainConfig tc = train_from_config(run_cfg);
    Config cfg = run_cfg;
    cfg.set_int("model.seq_len", data.seq_len());
    cfg.set_int("model.vocab_size", data.vocab_size());
    if (data.conditional()) cfg.set_bool("model.conditional", true);
    const ModelArch arch = arch_from_config(cfg);
    Schedule sched = schedule_from_config(cfg);
    DenoiserModel model(arch, sched, tc.seed);

    const NoiseConfig noise{tc.noise_std};
    Rng rng(tc.seed);
    AdamState adam;
    TrainStats stats;
    const auto start = Clock::now();

    double ema = -1.0, initial_ema = -1.0;
    int high_loss_streak = 0;
    LossConfig loss_cfg = tc.loss;
    loss_cfg.kind = LossKind::Diagonal;

    for (long long step = 1; step <= tc.steps; ++step) {
        const auto batch = build_diag_batch(data, model.schedule(), noise, tc.batch_size, rng);
        const DiagonalEval eval = diagonal_loss(model, batch, loss_cfg);
        adam_step(model.params(), adam, eval.bundle.param_grad, step, tc);

        ema = ema < 0.0 ? eval.bundle.loss : 0.99 * ema + 0.01 * eval.bundle.loss;
        if (initial_ema < 0.0) initial_ema = ema;
        high_loss_streak = ema > 10.0 * initial_ema ? high_loss_streak + 1 : 0;
        if (high_loss_streak >= 500) {
            stats.aborted = true;
            stats.abort_reason = "diagonal loss diverged (EMA > 10x initial for 500 steps)";
            stats.steps_run = step;
            break;
        }
        if (log && tc.log_every > 0 && (step % tc.log_every == 0 || step == tc.steps)) {
            (*log) << "step " << step << " loss " << eval.bundle.loss << " ema " << ema;
            if (data.oracle())
                (*log) << " probe_tv "
                       << probe_diagonal_tv(model, *data.oracle(), noise, tc.seed + 17);
            (*log) << '\n';
        }
    }
    if (!stats.aborted) stats.steps_run = tc.steps;
    stats.loss_ema = ema;
    if (data.oracle())
        stats.probe_tv = probe_diagonal_tv(model, *data.oracle(), noise, tc.seed + 17);
    stats.elapsed_seconds = seconds_since(start);

    TrainOutcome out{assemble_checkpoint(cfg, model, adam, nullptr, nullptr,
                                         static_cast<uint64_t>(stats.steps_run), rng),
                     stats};
    out.checkpoint.config.set("train.stage", "diagonal");
    return out;
}

TrainOutcome distill(const Config& run_cfg, const Checkpoint* init, LossKind kind,
                     const DataSource& data, std::ostream* log) {
    if (kind == LossKind::Diagonal)
        throw std::invalid_argument("distill: pick a consistency loss (psd | lsd | esd)");
    const TrainConfig tc = train_from_config(run_cfg);

    Config cfg = init ? init->config : run_cfg;
    if (!init) {
        cfg.set_int("model.seq_len", data.seq_len());
        cfg.set_int("model.vocab_size", data.vocab_size());
        if (data.conditional()) cfg.set_bool("model.conditional", true);
    }
    // run-level keys (steps, loss.*) come from the caller's config
    for (const auto& [k, v] : run_cfg.entries())
        if (k.rfind("train.", 0) == 0 || k.rfind("loss.", 0) == 0) cfg.set(k, v);

    LossConfig loss_cfg = loss_from_config(cfg);
    loss_cfg.kind = kind;
    // Appendix-style defaults unless the config overrides them explicitly.
    if (!cfg.has("loss.surgery")) loss_cfg.surgery = kind == LossKind::Psd;
    if (!cfg.has("loss.learnable_weight"))
        loss_cfg.learnable_weight =
            kind == LossKind::Psd ? LearnableWeightMode::OfS : LearnableWeightMode::OfSt;

    DenoiserModel model = init ? init->restore_model()
                               : DenoiserModel(arch_from_config(cfg), schedule_from_config(cfg),
                                               tc.seed);
    LossConfig diag_cfg;
    diag_cfg.kind = LossKind::Diagonal;
    diag_cfg.adaptive_c = 0.01;
    diag_cfg.adaptive_r = 0.5;

    WeightNet wnet(loss_cfg.learnable_weight, tc.seed + 1);
    const NoiseConfig noise{tc.noise_std};
    Rng rng(tc.seed);
    AdamState adam, wnet_adam;
    TrainStats stats;
    const auto start = Clock::now();

    if (data.oracle())
        stats.initial_probe_tv =
            probe_diagonal_tv(model, *data.oracle(), noise, tc.seed + 17);

    double ema = -1.0;
    int window_invalid = 0, window_total = 0;
    for (long long step = 1; step <= tc.steps; ++step) {
        const auto diag_batch =
            build_diag_batch(data, model.schedule(), noise, tc.batch_size, rng);
        auto cons_batch =
            build_consistency_batch(data, model.schedule(), noise, kind, tc.batch_size, rng);
        enforce_gap(cons_batch, kind);

        const DiagonalEval diag = diagonal_loss(model, diag_batch, diag_cfg);
        const ConsistencyEval cons =
            consistency_loss(model, cons_batch, kind, loss_cfg,
                             loss_cfg.learnable_weight == LearnableWeightMode::None ? nullptr
                                                                                    : &wnet);

        window_invalid += cons.invalid_items;
        window_total += tc.batch_size;
        if (window_total >= 50 * tc.batch_size) {
            if (window_invalid > window_total / 10) {
                stats.aborted = true;
                stats.abort_reason = "teacher-invalid rate above 10% (invalid " +
                                     std::to_string(window_invalid) + " of " +
                                     std::to_string(window_total) + ")";
                stats.steps_run = step;
                break;
            }
            window_invalid = 0;
            window_total = 0;
        }

        const std::vector<double> combined =
            loss_cfg.surgery ? gradient_surgery(diag.bundle.param_grad, cons.bundle.param_grad)
                             : [&] {
                                   std::vector<double> g = diag.bundle.param_grad;
                                   for (size_t i = 0; i < g.size(); ++i)
                                       g[i] += cons.bundle.param_grad[i];
                                   return g;
                               }();
        adam_step(model.params(), adam, combined, step, tc);
        if (loss_cfg.learnable_weight != LearnableWeightMode::None)
            adam_step(wnet.params(), wnet_adam, cons.weightnet_grad, step, tc);

        const double total_loss = diag.bundle.loss + cons.bundle.loss;
        ema = ema < 0.0 ? total_loss : 0.99 * ema + 0.01 * total_loss;
        if (log && tc.log_every > 0 && (step % tc.log_every == 0 || step == tc.steps))
            (*log) << "step " << step << " diag " << diag.bundle.loss << " cons "
                   << cons.bundle.loss << " kl " << cons.mean_kl << " invalid "
                   << cons.invalid_items << '\n';
    }
    if (!stats.aborted) stats.steps_run = tc.steps;
    stats.loss_ema = ema;
    if (data.oracle())
        stats.probe_tv = probe_diagonal_tv(model, *data.oracle(), noise, tc.seed + 17);
    stats.elapsed_seconds = seconds_since(start);

    loss_to_config(loss_cfg, cfg);
    TrainOutcome out{assemble_checkpoint(cfg, model, adam, &wnet, &wnet_adam,
                                         static_cast<uint64_t>(stats.steps_run), rng),
                     stats};
    out.checkpoint.config.set("train.stage", "distill");
    return out;
}

}  // namespace dfm
