#pragma once

// Exact ground truth for enumerable problems: Bayes-posterior denoiser,
// probability-flow drift, high-accuracy RK4 integration, and the
// time-averaged mean denoiser. Everything here is the reference the learned
// model and all identity checks are tested against.

#include "dfm/denoiser_source.hpp"
#include "dfm/mat.hpp"
#include "dfm/rng.hpp"
#include "dfm/schedule.hpp"
#include "dfm/toy_dist.hpp"

namespace dfm {

struct NoiseConfig {
    double std = 1.0;  // isotropic Gaussian scale of p0
};

// Interpolant state x = alpha_t x0 + beta_t onehot(target), built exactly.
struct InterpolantSample {
    Mat x;
    Mat x0;
    std::vector<int> target;
    double t = 0.0;
};

// Oracle evaluations clamp t to at most 1 - kOracleTerminalEps; the
// lambda_t pole sits at t = 1. Samplers handle t = 1 through the exact
// endpoint coefficients instead.
constexpr double kOracleTerminalEps = 1e-3;

Mat onehot_matrix(const std::vector<int>& tokens, int vocab_size);

Mat sample_noise_matrix(Rng& rng, int seq_len, int vocab_size, const NoiseConfig& noise);

InterpolantSample make_interpolant(const std::vector<int>& target, const Mat& x0,
                                   const Schedule& sched, double t);

// Per-position marginals of the exact joint posterior
//   P(I1 = seq | I_t = x) ~ p1(seq) exp(-|x - beta_t onehot(seq)|^2 / (2 alpha_t^2 std^2)),
// computed with a log-sum-exp over all K^L sequences. At t = 1 returns the
// one-hot of the nearest vertex per position.
Mat posterior_denoiser(const ToyDistribution& dist, const Schedule& sched,
                       const NoiseConfig& noise, const Mat& x, double t);

// b_t(x) = ell_t x + lambda_t E[I1 | I_t = x], per position.
Mat exact_drift(const ToyDistribution& dist, const Schedule& sched, const NoiseConfig& noise,
                const Mat& x, double t);

// Classical RK4 with n_steps uniform sub-steps of exact_drift; both times
// must stay at or below 1 - kOracleTerminalEps. s > t integrates the reverse
// flow, which derivative checks use for central differences.
Mat integrate_flow(const ToyDistribution& dist, const Schedule& sched, const NoiseConfig& noise,
                   const Mat& x_s, double s, double t, int n_steps);

// Time-averaged mean denoiser psi_{s,t}(x_s): composite Simpson quadrature of
// w(u) * posterior along the RK4 trajectory, sharing the step grid (n_steps
// rounded up to even). Rows are renormalized onto the simplex; a quadrature
// weight mass straying from 1 by more than 1e-4 is an integration error.
Mat exact_mean_denoiser(const ToyDistribution& dist, const Schedule& sched,
                        const NoiseConfig& noise, const Mat& x_s, double s, double t, int n_steps);

// One pass producing both the integrated state X_{s,t}(x_s) and the mean
// denoiser psi_{s,t}(x_s); identity sweeps use this to halve the work.
struct FlowAndMean {
    Mat x_t;
    Mat psi;
};
FlowAndMean flow_and_mean(const ToyDistribution& dist, const Schedule& sched,
                          const NoiseConfig& noise, const Mat& x_s, double s, double t,
                          int n_steps);

// DenoiserSource view of the oracle: the logit lift is log psi and the
// teacher-facing derivatives are central differences with step fd_h.
class OracleDenoiser : public DenoiserSource {
public:
    OracleDenoiser(const ToyDistribution& dist, Schedule sched, NoiseConfig noise,
                   int n_steps = 400, double fd_h = 1e-4)
        : dist_(&dist), sched_(std::move(sched)), noise_(noise), n_steps_(n_steps), fd_h_(fd_h) {}

    int seq_len() const override { return dist_->seq_len(); }
    int vocab_size() const override { return dist_->vocab_size(); }
    const Schedule& schedule() const override { return sched_; }

    Mat psi_exact(const Mat& x, double s, double t) const;
    Mat logits(const Mat& x, double s, double t) const override;
    Mat dlogits_dt(const Mat& x, double s, double t) const override;
    Mat total_derivative_s(const Mat& x, double s, double t, const Mat& v) const override;

    int integration_steps() const { return n_steps_; }

private:
    const ToyDistribution* dist_;
    Schedule sched_;
    NoiseConfig noise_;
    int n_steps_;
    double fd_h_;
};

}  // namespace dfm
