#pragma once

// Training objectives: diagonal cross-entropy with adaptive weighting and the
// three consistency teachers (semigroup, Lagrangian, Eulerian) distilled by
// weighted KL under the stop-gradient contract. Teachers are evaluated
// through the derivative-free path only; detached quantities are returned so
// tests can re-evaluate the student-side loss at perturbed parameters.

#include <stdexcept>
#include <vector>

#include "dfm/denoiser_source.hpp"
#include "dfm/mat.hpp"
#include "dfm/model.hpp"

namespace dfm {

enum class LossKind { Diagonal, Psd, Lsd, Esd };
enum class LearnableWeightMode { None, OfS, OfSt };

struct LossConfig {
    LossKind kind = LossKind::Diagonal;
    double adaptive_c = 0.01;  // diagonal default; consistency configs use 1e-6
    double adaptive_r = 0.5;
    LearnableWeightMode learnable_weight = LearnableWeightMode::None;
    bool surgery = false;
    bool reverse_kl = false;
    bool stabilized_teachers = true;
};

struct TeacherDiagnostics {
    double delta_norm = 0.0;  // || psi_{s,t} - teacher ||_F
    bool clamped = false;
};

struct TeacherOutput {
    Mat probs;  // detached teacher distribution, one simplex row per position
    TeacherDiagnostics diagnostics;
};

// Raised when a whole position of the teacher log argument needed clamping:
// the correction carries no usable signal there.
struct TeacherInvalidError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Semigroup teacher: omega psi_{s,u}(x) + (1-omega) psi_{u,t}(X_{s,u}(x)).
TeacherOutput psd_teacher(const DenoiserSource& src, const Mat& x, double s, double u, double t);

// Lagrangian logit teacher. The stabilized form multiplies the log argument
// 1 + C_{s,t} delta through by beta_dot_t, whose log contributes only a
// softmax-invariant shift:  beta_dot_t 1 + alpha_t Xi_{s,t} delta.
TeacherOutput lsd_teacher(const DenoiserSource& src, const Mat& x, double s, double t,
                          bool stabilized = true);

// Eulerian logit teacher with drift built from psi_{s,s}. Stabilized log
// argument: Gamma lambda_s 1 - Xi delta (for the linear schedule this is the
// (1-t) 1 - (1-s)(t-s) delta rearrangement up to a positive scale).
TeacherOutput esd_teacher(const DenoiserSource& src, const Mat& x, double s, double t,
                          const Mat& drift, bool stabilized = true);

// Adaptive-weighted KL: w = (|Delta|^2 + c)^(-r) detached, Delta = q - p.
// loss = w * mean-over-positions KL(p || q); cotangent on the student logits
// is (w / L)(q - p).
struct WeightedKl {
    double loss = 0.0;
    double weight = 0.0;
    double delta_norm = 0.0;
    double kl = 0.0;  // unweighted
    Mat cotangent;
};
WeightedKl weighted_kl(const Mat& teacher_probs, const Mat& student_logits, double adaptive_c,
                       double adaptive_r, bool reverse_kl = false);

// Learnable positive loss weight exp(net(s)) or exp(net(s, t)); the output
// layer is zero-initialized so a fresh net weighs exactly 1. Trained jointly
// with a -log(weight) term so the optimum is not weight -> 0.
class WeightNet {
public:
    WeightNet() = default;
    WeightNet(LearnableWeightMode mode, uint64_t seed, int hidden = 16);

    LearnableWeightMode mode() const { return mode_; }
    size_t param_count() const { return params_.size(); }
    std::vector<double>& params() { return params_; }
    const std::vector<double>& params() const { return params_; }

    double log_weight(double s, double t) const;
    double weight(double s, double t) const;
    // Accumulates upstream * d log_weight / d params into grad.
    void grad_log_weight(double s, double t, double upstream, std::vector<double>& grad) const;

private:
    LearnableWeightMode mode_ = LearnableWeightMode::None;
    int hidden_ = 0;
    int inputs_ = 0;
    std::vector<double> params_;
};

// Diagonal-priority conflict projection: if <g_cons, g_diag> < 0, the
// conflicting component of g_cons is removed before summing.
std::vector<double> gradient_surgery(const std::vector<double>& g_diag,
                                     const std::vector<double>& g_cons);

// ---- batch drivers ----

struct DiagonalBatchItem {
    Mat x;  // I_t
    std::vector<int> target;
    double t = 0.0;
    std::vector<int> context;  // empty when unconditional or dropped
};

struct DiagonalEval {
    GradBundle bundle;
    double unweighted_loss = 0.0;
    std::vector<double> weights;  // detached adaptive weights per item
};

DiagonalEval diagonal_loss(const DenoiserModel& model,
                           const std::vector<DiagonalBatchItem>& batch, const LossConfig& cfg);
// Student-side loss with the detached weights frozen (finite-difference oracle).
double diagonal_loss_frozen(const DenoiserModel& model,
                            const std::vector<DiagonalBatchItem>& batch,
                            const std::vector<double>& weights);

struct ConsistencyBatchItem {
    Mat x;  // I_s
    double s = 0.0, u = 0.0, t = 0.0;
    std::vector<int> context;
};

struct ConsistencyEval {
    GradBundle bundle;  // model-parameter gradient of the weighted objective
    std::vector<double> weightnet_grad;
    double mean_kl = 0.0;
    int clamped_items = 0;
    int invalid_items = 0;
    std::vector<Mat> teacher_probs;  // detached; invalid items hold an empty Mat
    std::vector<double> adaptive_w;
    std::vector<double> learnable_w;
};

ConsistencyEval consistency_loss(const DenoiserModel& model,
                                 const std::vector<ConsistencyBatchItem>& batch, LossKind kind,
                                 const LossConfig& cfg, const WeightNet* weight_net);
double consistency_loss_frozen(const DenoiserModel& model,
                               const std::vector<ConsistencyBatchItem>& batch,
                               const std::vector<Mat>& teacher_probs,
                               const std::vector<double>& adaptive_w,
                               const std::vector<double>& learnable_w, bool reverse_kl = false);

}  // namespace dfm
