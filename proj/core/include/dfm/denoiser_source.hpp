#pragma once

// Anything that exposes a mean denoiser through a logit lift, together with
// the two directional derivatives the consistency teachers need. Implemented
// by the trainable network (exact forward-mode derivatives) and by the exact
// oracle (finite differences of the log-probability lift).

#include "dfm/mat.hpp"
#include "dfm/schedule.hpp"
#include "dfm/simplex.hpp"

namespace dfm {

class DenoiserSource {
public:
    virtual ~DenoiserSource() = default;

    virtual int seq_len() const = 0;
    virtual int vocab_size() const = 0;
    virtual const Schedule& schedule() const = 0;

    // Logit lift z_{s,t}(x); psi = softmax per row. Any lift is acceptable:
    // consumers only use it through shift-invariant expressions.
    virtual Mat logits(const Mat& x, double s, double t) const = 0;

    // d/dt z_{s,t}(x).
    virtual Mat dlogits_dt(const Mat& x, double s, double t) const = 0;

    // Total derivative D_s z = d/ds z + J_x z . v along direction v.
    virtual Mat total_derivative_s(const Mat& x, double s, double t, const Mat& v) const = 0;

    Mat psi(const Mat& x, double s, double t) const { return softmax_rows(logits(x, s, t)); }
};

// Model-form drift b_s(x) = ell_s x + lambda_s psi_{s,s}(x), evaluated
// per position when the schedule is position-dependent.
Mat source_drift(const DenoiserSource& src, const Mat& x, double s);

// Model-form flow map X_{s,t}(x) = Gamma x + Xi psi_{s,t}(x).
Mat source_flow_map(const DenoiserSource& src, const Mat& x, double s, double t);

}  // namespace dfm
