#pragma once

// Trainable mean denoiser psi_{s,t}(x) = Softmax(z_{s,t}(x)): a per-position
// MLP with one mean-pool mixing layer, conditioned on the schedule times
// through (beta(s), beta(t)) features. Exposes reverse-mode parameter
// gradients for training and exact forward-mode (dual-number) directional
// derivatives for the consistency teachers; finite differences are reserved
// for test oracles.
//
// Parameter count (documented contract, checked by tests):
//   Din = K + L + 2 + (conditional ? 2K + 1 : 0)
//   P   = H(Din + 1) + H(2H + 1) + (n_layers - 1) H(H + 1) + K(H + 1)
// layout: [enc W, enc b | mix W, mix U, mix b | extra W,b ... | out W, out b].

#include <cstdint>
#include <vector>

#include "dfm/denoiser_source.hpp"
#include "dfm/mat.hpp"
#include "dfm/schedule.hpp"

namespace dfm {

struct ModelArch {
    int hidden_width = 64;
    int n_layers = 2;  // hidden blocks: the mixing layer plus n_layers - 1 plain layers
    int seq_len = 1;
    int vocab_size = 2;
    bool conditional = false;
    int max_context = 256;
};

struct GradBundle {
    double loss = 0.0;
    std::vector<double> param_grad;
};

class DenoiserModel {
public:
    DenoiserModel(ModelArch arch, Schedule sched, uint64_t seed);

    static size_t param_count(const ModelArch& arch);
    static int feature_dim(const ModelArch& arch);

    const ModelArch& arch() const { return arch_; }
    const Schedule& schedule() const { return sched_; }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    // Index of the first output-head parameter (the head spans the tail).
    size_t output_head_offset() const { return off_out_w_; }

    // ---- evaluation (no tape: this is the stop-gradient path) ----
    Mat forward(const Mat& x, double s, double t,
                const std::vector<int>* context = nullptr) const;
    Mat forward_diag(const Mat& x, double t, const std::vector<int>* context = nullptr) const {
        return forward(x, t, t, context);
    }
    Mat psi(const Mat& x, double s, double t, const std::vector<int>* context = nullptr) const {
        return softmax_rows(forward(x, s, t, context));
    }

    // ---- forward mode ----
    struct JvpResult {
        Mat z;
        Mat dz;
    };
    // Tangent (xdot, sdot, tdot) pushed through one dual-number pass.
    JvpResult jvp(const Mat& x, double s, double t, const Mat* xdot, double sdot, double tdot,
                  const std::vector<int>* context = nullptr) const;
    Mat dz_dt(const Mat& x, double s, double t, const std::vector<int>* context = nullptr) const {
        return jvp(x, s, t, nullptr, 0.0, 1.0, context).dz;
    }
    // D_s z = d/ds z + J_x z . v  (tangent xdot = v, sdot = 1, tdot = 0).
    Mat total_derivative_s(const Mat& x, double s, double t, const Mat& v,
                           const std::vector<int>* context = nullptr) const {
        return jvp(x, s, t, &v, 1.0, 0.0, context).dz;
    }

    // ---- reverse mode ----
    struct Tape {
        Mat features;  // L x Din
        Mat h0;        // post-tanh encoder
        std::vector<double> pool;
        Mat h1;                  // post-tanh mix layer
        std::vector<Mat> extra;  // post-tanh plain layers
        Mat z;
    };
    Mat forward_tape(const Mat& x, double s, double t, const std::vector<int>* context,
                     Tape& tape) const;
    // Accumulates d<upstream, z>/dparams into grad (resized if needed).
    void backward(const Tape& tape, const Mat& upstream, std::vector<double>& grad) const;
    GradBundle backward(const Mat& upstream, const Mat& x, double s, double t,
                        const std::vector<int>* context = nullptr) const;

private:
    template <typename S>
    void run(const MatT<S>& features, MatT<S>& z, Tape* tape) const;
    template <typename S>
    MatT<S> build_features(const MatT<S>& x, const std::vector<S>& beta_s,
                           const std::vector<S>& beta_t, const std::vector<int>* context) const;
    void check_inputs(const Mat& x, double s, double t, const std::vector<int>* context) const;

    ModelArch arch_;
    Schedule sched_;
    std::vector<double> params_;
    int din_ = 0;
    size_t off_enc_w_ = 0, off_enc_b_ = 0;
    size_t off_mix_w_ = 0, off_mix_u_ = 0, off_mix_b_ = 0;
    std::vector<size_t> off_extra_w_, off_extra_b_;
    size_t off_out_w_ = 0, off_out_b_ = 0;
};

// DenoiserSource view of a model bound to an optional context.
class ModelSource : public DenoiserSource {
public:
    ModelSource(const DenoiserModel& model, const std::vector<int>* context = nullptr)
        : model_(&model), context_(context) {}

    int seq_len() const override { return model_->arch().seq_len; }
    int vocab_size() const override { return model_->arch().vocab_size; }
    const Schedule& schedule() const override { return model_->schedule(); }

    Mat logits(const Mat& x, double s, double t) const override {
        return model_->forward(x, s, t, context_);
    }
    Mat dlogits_dt(const Mat& x, double s, double t) const override {
        return model_->dz_dt(x, s, t, context_);
    }
    Mat total_derivative_s(const Mat& x, double s, double t, const Mat& v) const override {
        return model_->total_derivative_s(x, s, t, v, context_);
    }

private:
    const DenoiserModel* model_;
    const std::vector<int>* context_;
};

}  // namespace dfm
