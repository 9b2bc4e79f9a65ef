#include "dfm/oracle.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace dfm {

namespace {

// Scratch buffers reused across posterior calls inside one integration.
struct PosteriorScratch {
    std::vector<double> logw;
    Mat score;
};

void posterior_into(const ToyDistribution& dist, const Schedule& sched, const NoiseConfig& noise,
                    const Mat& x, double t, Mat& out, PosteriorScratch& scratch) {
    const int L = dist.seq_len();
    const int K = dist.vocab_size();
    if (x.rows() != L || x.cols() != K)
        throw std::invalid_argument("posterior_denoiser: state shape mismatch");

    if (out.rows() != L || out.cols() != K) out = Mat(L, K);

    // Fully degenerate time: nearest vertex per position.
    if (t >= 1.0) {
        for (int l = 0; l < L; ++l) {
            int best = 0;
            for (int k = 1; k < K; ++k)
                if (x(l, k) > x(l, best)) best = k;
            for (int k = 0; k < K; ++k) out(l, k) = k == best ? 1.0 : 0.0;
        }
        return;
    }

    // Per-position Gaussian log-likelihood scores; terms shared by every
    // sequence are dropped. Positions whose alpha has collapsed (staggered
    // schedules near the end) get a clamped, effectively infinite precision.
    if (scratch.score.rows() != L || scratch.score.cols() != K) scratch.score = Mat(L, K);
    for (int l = 0; l < L; ++l) {
        const auto [al, bl] =
            sched.per_position() ? sched.alpha_beta_at(t, l) : sched.alpha_beta(t);
        const double a = al > 1e-8 ? al : 1e-8;
        const double inv = 1.0 / (a * a * noise.std * noise.std);
        for (int k = 0; k < K; ++k)
            scratch.score(l, k) = (bl * x(l, k) - 0.5 * bl * bl) * inv;
    }

    const size_t n = dist.num_sequences();
    scratch.logw.resize(n);
    const auto& joint = dist.joint();

    // Odometer walk over all sequences with incremental score updates.
    std::vector<int> digits(static_cast<size_t>(L), 0);
    double acc = 0.0;
    for (int l = 0; l < L; ++l) acc += scratch.score(l, 0);
    double maxw = -std::numeric_limits<double>::infinity();
    for (size_t idx = 0;; ++idx) {
        const double lw = (joint[idx] > 0.0 ? std::log(joint[idx])
                                            : -std::numeric_limits<double>::infinity()) +
                          acc;
        scratch.logw[idx] = lw;
        if (lw > maxw) maxw = lw;
        if (idx + 1 == n) break;
        int pos = L - 1;
        while (digits[static_cast<size_t>(pos)] == K - 1) {
            acc -= scratch.score(pos, K - 1);
            acc += scratch.score(pos, 0);
            digits[static_cast<size_t>(pos)] = 0;
            --pos;
        }
        acc -= scratch.score(pos, digits[static_cast<size_t>(pos)]);
        ++digits[static_cast<size_t>(pos)];
        acc += scratch.score(pos, digits[static_cast<size_t>(pos)]);
    }
    if (!std::isfinite(maxw))
        throw std::runtime_error("posterior_denoiser: all sequence weights vanished");

    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = 0.0;
    std::fill(digits.begin(), digits.end(), 0);
    double total = 0.0;
    for (size_t idx = 0;; ++idx) {
        const double w = std::exp(scratch.logw[idx] - maxw);
        total += w;
        for (int l = 0; l < L; ++l) out(l, digits[static_cast<size_t>(l)]) += w;
        if (idx + 1 == n) break;
        int pos = L - 1;
        while (digits[static_cast<size_t>(pos)] == K - 1) {
            digits[static_cast<size_t>(pos)] = 0;
            --pos;
        }
        ++digits[static_cast<size_t>(pos)];
    }
    const double inv_total = 1.0 / total;
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] *= inv_total;
}

void drift_from_posterior(const Schedule& sched, const Mat& x, double t, const Mat& post,
                          Mat& out) {
    const int L = x.rows();
    const int K = x.cols();
    if (out.rows() != L || out.cols() != K) out = Mat(L, K);
    for (int l = 0; l < L; ++l) {
        double al, bdl;
        if (sched.per_position()) {
            al = sched.alpha_beta_at(t, l).first;
            bdl = sched.beta_dot_at(t, l);
        } else {
            al = sched.alpha_beta(t).first;
            bdl = sched.beta_dot(t);
        }
        const double lam = bdl / al;
        const double ell = -lam;
        for (int k = 0; k < K; ++k) out(l, k) = ell * x(l, k) + lam * post(l, k);
    }
}

void check_terminal(double t, const char* who) {
    if (t > 1.0 - kOracleTerminalEps + 1e-12)
        throw std::domain_error(std::string(who) + ": t beyond the terminal clamp 1 - 1e-3");
}

}  // namespace

Mat onehot_matrix(const std::vector<int>& tokens, int vocab_size) {
    Mat m(static_cast<int>(tokens.size()), vocab_size);
    for (int l = 0; l < m.rows(); ++l) {
        const int tok = tokens[static_cast<size_t>(l)];
        if (tok < 0 || tok >= vocab_size) throw std::out_of_range("onehot_matrix: bad token");
        m(l, tok) = 1.0;
    }
    return m;
}

Mat sample_noise_matrix(Rng& rng, int seq_len, int vocab_size, const NoiseConfig& noise) {
    Mat m(seq_len, vocab_size);
    for (auto& v : m.data()) v = rng.normal(0.0, noise.std);
    return m;
}

InterpolantSample make_interpolant(const std::vector<int>& target, const Mat& x0,
                                   const Schedule& sched, double t) {
    InterpolantSample s;
    s.x0 = x0;
    s.target = target;
    s.t = t;
    const int L = x0.rows();
    const int K = x0.cols();
    s.x = Mat(L, K);
    for (int l = 0; l < L; ++l) {
        const auto [a, b] = sched.per_position() ? sched.alpha_beta_at(t, l) : sched.alpha_beta(t);
        for (int k = 0; k < K; ++k)
            s.x(l, k) = a * x0(l, k) + (k == target[static_cast<size_t>(l)] ? b : 0.0);
    }
    return s;
}

Mat posterior_denoiser(const ToyDistribution& dist, const Schedule& sched,
                       const NoiseConfig& noise, const Mat& x, double t) {
    Mat out;
    PosteriorScratch scratch;
    posterior_into(dist, sched, noise, x, t, out, scratch);
    return out;
}

Mat exact_drift(const ToyDistribution& dist, const Schedule& sched, const NoiseConfig& noise,
                const Mat& x, double t) {
    check_terminal(t, "exact_drift");
    Mat post;
    PosteriorScratch scratch;
    posterior_into(dist, sched, noise, x, t, post, scratch);
    Mat b;
    drift_from_posterior(sched, x, t, post, b);
    return b;
}

namespace {

// One RK4 + Simpson sweep. When mean_out is non-null the quadrature of
// w(u) posterior(x_u, u) accumulates over the same node grid. s > t runs the
// reverse flow (used by derivative checks); mean accumulation is forward-only.
Mat rk4_sweep(const ToyDistribution& dist, const Schedule& sched, const NoiseConfig& noise,
              const Mat& x_s, double s, double t, int n_steps, Mat* mean_out) {
    if (mean_out && !(s < t)) throw std::domain_error("exact_mean_denoiser: need s < t");
    check_terminal(s, "integrate_flow");
    check_terminal(t, "integrate_flow");
    if (n_steps < 2) n_steps = 2;
    if (n_steps % 2) ++n_steps;  // Simpson shares this grid

    const int L = x_s.rows();
    const int K = x_s.cols();
    const double h = (t - s) / n_steps;

    Mat x = x_s;
    Mat post, k1, k2, k3, k4, tmp(L, K);
    PosteriorScratch scratch;

    std::vector<double> wsum;
    Mat acc;
    std::vector<CoefficientSet> cst;
    if (mean_out) {
        wsum.assign(static_cast<size_t>(L), 0.0);
        acc = Mat(L, K);
        cst.resize(static_cast<size_t>(L));
        for (int l = 0; l < L; ++l)
            cst[static_cast<size_t>(l)] =
                sched.per_position() ? sched.coeffs_at(s, t, l) : sched.coeffs(s, t);
    }

    auto accumulate = [&](const Mat& state, const Mat& posterior, double u, int node) {
        if (!mean_out) return;
        (void)state;
        const double simpson =
            (node == 0 || node == n_steps) ? h / 3.0 : (node % 2 ? 4.0 * h / 3.0 : 2.0 * h / 3.0);
        for (int l = 0; l < L; ++l) {
            double au, bdu;
            if (sched.per_position()) {
                au = sched.alpha_beta_at(u, l).first;
                bdu = sched.beta_dot_at(u, l);
            } else {
                au = sched.alpha_beta(u).first;
                bdu = sched.beta_dot(u);
            }
            const auto& c = cst[static_cast<size_t>(l)];
            const double at = c.gamma * (sched.per_position() ? sched.alpha_beta_at(s, l).first
                                                              : sched.alpha_beta(s).first);
            const double w = at / c.xi * bdu / (au * au);
            const double cw = simpson * w;
            wsum[static_cast<size_t>(l)] += cw;
            for (int k = 0; k < K; ++k) acc(l, k) += cw * posterior(l, k);
        }
    };

    for (int step = 0; step < n_steps; ++step) {
        const double u = s + step * h;
        posterior_into(dist, sched, noise, x, u, post, scratch);
        drift_from_posterior(sched, x, u, post, k1);
        accumulate(x, post, u, step);

        for (size_t i = 0; i < tmp.size(); ++i) tmp.data()[i] = x.data()[i] + 0.5 * h * k1.data()[i];
        posterior_into(dist, sched, noise, tmp, u + 0.5 * h, post, scratch);
        drift_from_posterior(sched, tmp, u + 0.5 * h, post, k2);

        for (size_t i = 0; i < tmp.size(); ++i) tmp.data()[i] = x.data()[i] + 0.5 * h * k2.data()[i];
        posterior_into(dist, sched, noise, tmp, u + 0.5 * h, post, scratch);
        drift_from_posterior(sched, tmp, u + 0.5 * h, post, k3);

        for (size_t i = 0; i < tmp.size(); ++i) tmp.data()[i] = x.data()[i] + h * k3.data()[i];
        posterior_into(dist, sched, noise, tmp, u + h, post, scratch);
        drift_from_posterior(sched, tmp, u + h, post, k4);

        for (size_t i = 0; i < x.size(); ++i) {
            x.data()[i] +=
                h / 6.0 * (k1.data()[i] + 2.0 * k2.data()[i] + 2.0 * k3.data()[i] + k4.data()[i]);
            if (!std::isfinite(x.data()[i]))
                throw std::runtime_error("integrate_flow: trajectory blew up at sub-step " +
                                         std::to_string(step));
        }
    }

    if (mean_out) {
        posterior_into(dist, sched, noise, x, t, post, scratch);
        accumulate(x, post, t, n_steps);
        for (int l = 0; l < L; ++l) {
            if (std::abs(wsum[static_cast<size_t>(l)] - 1.0) > 1e-4)
                throw std::runtime_error(
                    "exact_mean_denoiser: quadrature weight mass deviates from 1 by more than 1e-4");
            double rowsum = 0.0;
            for (int k = 0; k < K; ++k) rowsum += acc(l, k);
            for (int k = 0; k < K; ++k) acc(l, k) /= rowsum;
        }
        *mean_out = std::move(acc);
    }
    return x;
}

}  // namespace

Mat integrate_flow(const ToyDistribution& dist, const Schedule& sched, const NoiseConfig& noise,
                   const Mat& x_s, double s, double t, int n_steps) {
    if (s == t) return x_s;
    return rk4_sweep(dist, sched, noise, x_s, s, t, n_steps, nullptr);
}

Mat exact_mean_denoiser(const ToyDistribution& dist, const Schedule& sched,
                        const NoiseConfig& noise, const Mat& x_s, double s, double t, int n_steps) {
    if (!(s < t)) throw std::domain_error("exact_mean_denoiser: need s < t");
    Mat psi;
    rk4_sweep(dist, sched, noise, x_s, s, t, n_steps, &psi);
    return psi;
}

FlowAndMean flow_and_mean(const ToyDistribution& dist, const Schedule& sched,
                          const NoiseConfig& noise, const Mat& x_s, double s, double t,
                          int n_steps) {
    if (!(s < t)) throw std::domain_error("flow_and_mean: need s < t");
    FlowAndMean out;
    out.x_t = rk4_sweep(dist, sched, noise, x_s, s, t, n_steps, &out.psi);
    return out;
}

Mat OracleDenoiser::psi_exact(const Mat& x, double s, double t) const {
    if (s == t) return posterior_denoiser(*dist_, sched_, noise_, x, t);
    // The quadrature weight grows like 1/(1-u)^2, so intervals that end close
    // to the boundary need proportionally more Simpson nodes.
    int n = n_steps_;
    if (t < 1.0) {
        const double need = 32.0 * (t - s) / (1.0 - t);
        if (need > n) n = static_cast<int>(need < 4000.0 ? need : 4000.0);
    }
    return exact_mean_denoiser(*dist_, sched_, noise_, x, s, t, n);
}

Mat OracleDenoiser::logits(const Mat& x, double s, double t) const {
    Mat psi = psi_exact(x, s, t);
    for (auto& v : psi.data()) v = std::log(v > 1e-300 ? v : 1e-300);
    return psi;
}

Mat OracleDenoiser::dlogits_dt(const Mat& x, double s, double t) const {
    const Mat hi = logits(x, s, t + fd_h_);
    const Mat lo = logits(x, s, t - fd_h_);
    return axby(0.5 / fd_h_, hi, -0.5 / fd_h_, lo);
}

Mat OracleDenoiser::total_derivative_s(const Mat& x, double s, double t, const Mat& v) const {
    const Mat hi = logits(axby(1.0, x, fd_h_, v), s + fd_h_, t);
    const Mat lo = logits(axby(1.0, x, -fd_h_, v), s - fd_h_, t);
    return axby(0.5 / fd_h_, hi, -0.5 / fd_h_, lo);
}

Mat source_drift(const DenoiserSource& src, const Mat& x, double s) {
    const Schedule& sched = src.schedule();
    const Mat psi = src.psi(x, s, s);
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
        for (int k = 0; k < x.cols(); ++k) out(l, k) = -lam * x(l, k) + lam * psi(l, k);
    }
    return out;
}

Mat source_flow_map(const DenoiserSource& src, const Mat& x, double s, double t) {
    if (s == t) return x;
    const Schedule& sched = src.schedule();
    const Mat psi = src.psi(x, s, t);
    Mat out(x.rows(), x.cols());
    for (int l = 0; l < x.rows(); ++l) {
        double gamma, xi;
        if (t >= 1.0) {
            gamma = 0.0;
            xi = 1.0;
        } else {
            const CoefficientSet c =
                sched.per_position() ? sched.coeffs_at(s, t, l) : sched.coeffs(s, t);
            gamma = c.gamma;
            xi = c.xi;
        }
        for (int k = 0; k < x.cols(); ++k) out(l, k) = gamma * x(l, k) + xi * psi(l, k);
    }
    return out;
}

}  // namespace dfm
