#pragma once

// Interpolant schedules I_t = alpha_t I0 + beta_t I1 with alpha_t = 1 - beta_t,
// plus every closed-form scalar appearing in the flow-map identities.
//
// Scalars, for 0 <= s < t <= 1:
//   Gamma_{s,t} = alpha_t / alpha_s
//   Xi_{s,t}    = beta_t - Gamma_{s,t} beta_s
//   ell_t       = d/dt log alpha_t
//   lambda_t    = beta_dot_t - beta_t ell_t
//   C_{s,t}     = Xi_{s,t} / lambda_t          (Lagrangian correction)
//   kappa_{s,t} = Gamma_{s,t} lambda_s / Xi_{s,t}
// C is evaluated through the pole-free form Xi * alpha_t / beta_dot_t, never
// by dividing by lambda_t (which is infinite at t = 1).

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "dfm/rng.hpp"

namespace dfm {

enum class ScheduleKind { Linear, BlendedArgmax, Tabulated };

struct CoefficientSet {
    double gamma = 0.0;  // Gamma_{s,t}
    double xi = 0.0;     // Xi_{s,t}
    double ell_s = 0.0;
    double ell_t = 0.0;
    double lam_s = 0.0;
    double lam_t = 0.0;
    double c_lag = 0.0;  // C_{s,t}
    double kappa = 0.0;  // kappa_{s,t}
};

class Schedule {
public:
    Schedule() = default;  // linear

    static Schedule make_linear();

    // Monotone reparameterization calibrated so the probability that
    // argmax(I_t) already equals argmax(I_1) grows linearly in t, blended
    // with the identity: beta~(t) = lambda * beta(t) + (1 - lambda) * t.
    // Tabulated on grid_size points with endpoints pinned exactly.
    static Schedule make_blended_argmax(double lambda_blend, int vocab_size, double noise_std,
                                        int mc_samples, int grid_size, Rng& rng);

    // General monotone table of (t, beta) pairs; endpoints must be (0,0), (1,1).
    static Schedule make_tabulated(std::vector<double> t_nodes, std::vector<double> beta_nodes);

    ScheduleKind kind() const { return kind_; }
    double lambda_blend() const { return lambda_blend_; }

    // ---- base schedule ----
    std::pair<double, double> alpha_beta(double t) const;  // (alpha_t, beta_t)
    double beta(double t) const;
    double beta_dot(double t) const;
    double beta_inverse(double b) const;  // leftmost preimage on flats

    CoefficientSet coeffs(double s, double t) const;        // requires s < t
    double semigroup_weight(double s, double u, double t) const;  // omega_{s,u,t}
    // Density w_{s,t}(u) of the time-averaged denoiser; requires s<=u<=t, t<1.
    double time_average_weight(double s, double t, double u) const;

    // ---- position-dependent variant ----
    // Returns a copy where position l evaluates beta at the warped time
    // clip((t - d*l/(L-1)) / (1-d), 0, 1) with d = stagger / (1 + stagger).
    // Earlier positions are denoised sooner; endpoints are preserved.
    Schedule with_position_stagger(int n_positions, double stagger) const;

    bool per_position() const { return !position_offsets_.empty(); }
    int n_positions() const { return static_cast<int>(position_offsets_.size()); }
    const std::vector<double>& position_offsets() const { return position_offsets_; }

    std::pair<double, double> alpha_beta_at(double t, int pos) const;
    double beta_at(double t, int pos) const;
    double beta_dot_at(double t, int pos) const;
    CoefficientSet coeffs_at(double s, double t, int pos) const;

    // ---- serialization ----
    // Tabulated grids round-trip exactly through the decimal text form.
    std::string describe() const;
    static Schedule parse(const std::string& text);

    const std::vector<double>& grid_t() const { return t_nodes_; }
    const std::vector<double>& grid_beta() const { return beta_nodes_; }

private:
    CoefficientSet coeffs_from_values(double as, double bs, double bds, double at, double bt,
                                      double bdt, double s, double t) const;
    double warp(double t, int pos, double* dwarp_dt) const;
    size_t cell_of(double t) const;

    ScheduleKind kind_ = ScheduleKind::Linear;
    double lambda_blend_ = 0.0;
    std::vector<double> t_nodes_;     // empty for linear
    std::vector<double> beta_nodes_;  // tabulated beta values
    std::vector<double> node_slope_;  // monotone C1 (Fritsch-Carlson) node slopes
    std::vector<double> position_offsets_;  // per-position time shifts, empty if shared
};

// Pool-adjacent-violators isotonic regression (non-decreasing, equal weights).
std::vector<double> isotonic_fit(const std::vector<double>& y);

}  // namespace dfm
