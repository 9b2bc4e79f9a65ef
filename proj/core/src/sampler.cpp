#include "dfm/sampler.hpp"

#include <cmath>
#include <stdexcept>

#include "dfm/threading.hpp"

namespace dfm {

Mat sample_noise(Rng& rng, int seq_len, int vocab_size, const NoiseConfig& noise) {
    return sample_noise_matrix(rng, seq_len, vocab_size, noise);
}

Mat cfg_combine(const Mat& psi_cond, const Mat& psi_uncond, double omega) {
    if (!psi_cond.same_shape(psi_uncond)) throw std::invalid_argument("cfg_combine: shape mismatch");
    if (omega < 0.0) throw std::invalid_argument("cfg_combine: omega must be >= 0");
    Mat out(psi_cond.rows(), psi_cond.cols());
    for (size_t i = 0; i < out.size(); ++i)
        out.data()[i] =
            psi_uncond.data()[i] + omega * (psi_cond.data()[i] - psi_uncond.data()[i]);
    return out;
}

Mat cfg_combine_drift(const Mat& psi_cond, const Mat& psi_uncond, double omega,
                      const Schedule& sched, const Mat& x, double s) {
    const Mat psi = cfg_combine(psi_cond, psi_uncond, omega);
    Mat out(x.rows(), x.cols());
    for (int l = 0; l < x.rows(); ++l) {
        double a, bd;
        if (sched.per_position()) {
            a = sched.alpha_beta_at(s, l).first;
            bd = sched.beta_dot_at(s, l);
        } else {
            a = sched.alpha_beta(s).first;
            bd = sched.beta_dot(s);
        }
        const double lam = bd / a;
        for (int k = 0; k < x.cols(); ++k) out(l, k) = lam * (psi(l, k) - x(l, k));
    }
    return out;
}

Mat flow_map_step(const Schedule& sched, const PsiFn& psi, const Mat& x, double s, double t) {
    if (!(s < t && t <= 1.0)) throw std::domain_error("flow_map_step: need s < t <= 1");
    const Mat p = psi(x, s, t);
    for (double v : p.data())
        if (!std::isfinite(v)) throw std::runtime_error("flow_map_step: non-finite denoiser output");
    Mat out(x.rows(), x.cols());
    for (int l = 0; l < x.rows(); ++l) {
        double gamma, xi;
        if (t >= 1.0) {
            gamma = 0.0;  // exact endpoint rule; no epsilon clamp
            xi = 1.0;
        } else {
            const CoefficientSet c =
                sched.per_position() ? sched.coeffs_at(s, t, l) : sched.coeffs(s, t);
            gamma = c.gamma;
            xi = c.xi;
        }
        for (int k = 0; k < x.cols(); ++k) out(l, k) = gamma * x(l, k) + xi * p(l, k);
    }
    return out;
}

Mat flow_map_step(const DenoiserSource& src, const Mat& x, double s, double t) {
    return flow_map_step(src.schedule(),
                         [&](const Mat& xx, double ss, double tt) { return src.psi(xx, ss, tt); },
                         x, s, t);
}

PsiFn model_psi(const DenoiserModel& model, const std::vector<int>* context) {
    return [&model, context](const Mat& x, double s, double t) {
        return model.psi(x, s, t, context);
    };
}

PsiFn guided_psi(const DenoiserModel& model, const std::vector<int>& context, double omega) {
    return [&model, &context, omega](const Mat& x, double s, double t) {
        const Mat cond = model.psi(x, s, t, &context);
        if (omega == 1.0) return cond;
        const Mat uncond = model.psi(x, s, t, nullptr);
        return cfg_combine(cond, uncond, omega);
    };
}

PsiFn oracle_psi(const OracleDenoiser& oracle) {
    return [&oracle](const Mat& x, double s, double t) {
        const double t_eff = std::min(t, 1.0 - kOracleTerminalEps);
        if (s >= t_eff) return oracle.psi_exact(x, t_eff, t_eff);
        return oracle.psi_exact(x, s, t_eff);
    };
}

std::vector<double> sampling_times(const Schedule& sched, int nfe, TimeGrid grid) {
    if (nfe < 1) throw std::invalid_argument("sampling_times: need nfe >= 1");
    std::vector<double> times(static_cast<size_t>(nfe) + 1);
    for (int i = 0; i <= nfe; ++i) {
        const double frac = static_cast<double>(i) / nfe;
        times[static_cast<size_t>(i)] =
            grid == TimeGrid::UniformBeta ? sched.beta_inverse(frac) : frac;
    }
    times.front() = 0.0;
    times.back() = 1.0;
    for (size_t i = 1; i < times.size(); ++i)
        if (!(times[i] > times[i - 1]))
            throw std::runtime_error("sampling_times: degenerate time grid");
    return times;
}

std::vector<int> generate(const Schedule& sched, const PsiFn& psi, int seq_len, int vocab_size,
                          const SamplerConfig& cfg, Rng& rng, Mat* final_state, Mat* final_psi) {
    const auto times = sampling_times(sched, cfg.nfe, cfg.time_grid);
    NoiseConfig noise{cfg.noise_std};
    Mat x = sample_noise(rng, seq_len, vocab_size, noise);
    for (size_t i = 0; i + 2 < times.size(); ++i)
        x = flow_map_step(sched, psi, x, times[i], times[i + 1]);

    // Terminal step lands at t = 1 with the exact endpoint rule x <- psi.
    Mat last_psi = psi(x, times[times.size() - 2], 1.0);
    for (double v : last_psi.data())
        if (!std::isfinite(v)) throw std::runtime_error("generate: non-finite denoiser output");
    x = last_psi;
    std::vector<int> tokens(static_cast<size_t>(seq_len));
    for (int l = 0; l < seq_len; ++l)
        tokens[static_cast<size_t>(l)] =
            decode_argmax(std::span<const double>(x.row(l), static_cast<size_t>(vocab_size)));
    if (final_state) *final_state = std::move(x);
    if (final_psi) *final_psi = std::move(last_psi);
    return tokens;
}

std::vector<std::vector<int>> generate_many(const Schedule& sched, const PsiFn& psi, int seq_len,
                                            int vocab_size, const SamplerConfig& cfg,
                                            int num_samples) {
    std::vector<std::vector<int>> out(static_cast<size_t>(num_samples));
    parallel_for(num_samples, [&](int i) {
        Rng rng(cfg.seed, static_cast<uint64_t>(i));
        out[static_cast<size_t>(i)] = generate(sched, psi, seq_len, vocab_size, cfg, rng);
    });
    return out;
}

TokenSeq block_generate(const DenoiserModel& model, const std::vector<int>& prompt,
                        const SamplerConfig& cfg, Rng& rng) {
    const int block_len = cfg.block_len > 0 ? cfg.block_len : model.arch().seq_len;
    if (block_len != model.arch().seq_len)
        throw std::invalid_argument("block_generate: block_len must match the model sequence length");
    TokenSeq out;
    out.context = prompt;
    std::vector<int> context = prompt;
    for (int b = 0; b < cfg.n_blocks; ++b) {
        if (static_cast<int>(context.size()) > model.arch().max_context)
            throw std::invalid_argument("block_generate: context exceeds the model's max context");
        PsiFn psi;
        if (context.empty()) {
            psi = model_psi(model, nullptr);  // unconditional fallback
        } else if (!model.arch().conditional) {
            throw std::invalid_argument("block_generate: prompt given to unconditional model");
        } else if (cfg.guidance_omega == 1.0 || cfg.guidance_omega == 0.0) {
            psi = model_psi(model, cfg.guidance_omega == 0.0 ? nullptr : &context);
        } else {
            psi = guided_psi(model, context, cfg.guidance_omega);
        }
        const auto block = generate(model.schedule(), psi, block_len, model.arch().vocab_size,
                                    cfg, rng);
        out.tokens.insert(out.tokens.end(), block.begin(), block.end());
        context.insert(context.end(), block.begin(), block.end());
    }
    return out;
}

}  // namespace dfm
