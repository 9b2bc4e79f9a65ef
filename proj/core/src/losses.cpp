#include "dfm/losses.hpp"

#include <cmath>

#include "dfm/rng.hpp"
#include "dfm/threading.hpp"

namespace dfm {

namespace {

constexpr double kLogArgFloor = 1e-12;

double frobenius(const Mat& a) {
    double s = 0.0;
    for (double v : a.data()) s += v * v;
    return std::sqrt(s);
}

// Applies the clamped elementwise log of the correction argument and forms
// softmax(base - log(arg)). A position whose argument is entirely clamped is
// teacher-invalid.
TeacherOutput finish_logit_teacher(const Mat& base_logits, Mat log_arg, const Mat& psi_st) {
    TeacherOutput out;
    for (int l = 0; l < log_arg.rows(); ++l) {
        int clamped_here = 0;
        for (int k = 0; k < log_arg.cols(); ++k) {
            if (log_arg(l, k) < kLogArgFloor) {
                log_arg(l, k) = kLogArgFloor;
                ++clamped_here;
            }
        }
        if (clamped_here == log_arg.cols())
            throw TeacherInvalidError("teacher: log argument fully clamped at a position");
        if (clamped_here > 0) out.diagnostics.clamped = true;
    }
    Mat teacher_logits(base_logits.rows(), base_logits.cols());
    for (size_t i = 0; i < teacher_logits.size(); ++i)
        teacher_logits.data()[i] = base_logits.data()[i] - std::log(log_arg.data()[i]);
    out.probs = softmax_rows(teacher_logits);
    out.diagnostics.delta_norm = frobenius(psi_st - out.probs);
    return out;
}

}  // namespace

TeacherOutput psd_teacher(const DenoiserSource& src, const Mat& x, double s, double u, double t) {
    if (!(s < u && u < t)) throw std::domain_error("psd_teacher: need s < u < t");
    const Schedule& sched = src.schedule();
    const Mat psi_su = src.psi(x, s, u);
    const Mat x_u = source_flow_map(src, x, s, u);
    const Mat psi_ut = src.psi(x_u, u, t);
    const Mat psi_st = src.psi(x, s, t);

    TeacherOutput out;
    out.probs = Mat(x.rows(), x.cols());
    for (int l = 0; l < x.rows(); ++l) {
        double omega;
        if (sched.per_position()) {
            const CoefficientSet su = sched.coeffs_at(s, u, l);
            const CoefficientSet ut = sched.coeffs_at(u, t, l);
            const CoefficientSet st = sched.coeffs_at(s, t, l);
            omega = ut.gamma * su.xi / st.xi;
        } else {
            omega = sched.semigroup_weight(s, u, t);
        }
        for (int k = 0; k < x.cols(); ++k)
            out.probs(l, k) = omega * psi_su(l, k) + (1.0 - omega) * psi_ut(l, k);
    }
    out.diagnostics.delta_norm = frobenius(psi_st - out.probs);
    return out;
}

TeacherOutput lsd_teacher(const DenoiserSource& src, const Mat& x, double s, double t,
                          bool stabilized) {
    if (!(s < t)) throw std::domain_error("lsd_teacher: need s < t");
    const Schedule& sched = src.schedule();
    const Mat z_st = src.logits(x, s, t);
    const Mat psi_st = softmax_rows(z_st);
    const Mat dz = src.dlogits_dt(x, s, t);
    const Mat x_t = source_flow_map(src, x, s, t);
    const Mat z_tt = src.logits(x_t, t, t);

    Mat log_arg(x.rows(), x.cols());
    for (int l = 0; l < x.rows(); ++l) {
        double proj = 0.0;
        for (int k = 0; k < x.cols(); ++k) proj += psi_st(l, k) * dz(l, k);
        const CoefficientSet c =
            sched.per_position() ? sched.coeffs_at(s, t, l) : sched.coeffs(s, t);
        const double at = sched.per_position() ? sched.alpha_beta_at(t, l).first
                                               : sched.alpha_beta(t).first;
        const double bdt =
            sched.per_position() ? sched.beta_dot_at(t, l) : sched.beta_dot(t);
        for (int k = 0; k < x.cols(); ++k) {
            const double delta = dz(l, k) - proj;
            log_arg(l, k) = stabilized ? bdt + at * c.xi * delta : 1.0 + c.c_lag * delta;
        }
    }
    return finish_logit_teacher(z_tt, std::move(log_arg), psi_st);
}

TeacherOutput esd_teacher(const DenoiserSource& src, const Mat& x, double s, double t,
                          const Mat& drift, bool stabilized) {
    if (!(s < t)) throw std::domain_error("esd_teacher: need s < t");
    const Schedule& sched = src.schedule();
    const Mat z_st = src.logits(x, s, t);
    const Mat psi_st = softmax_rows(z_st);
    const Mat dz = src.total_derivative_s(x, s, t, drift);
    const Mat z_ss = src.logits(x, s, s);

    Mat log_arg(x.rows(), x.cols());
    for (int l = 0; l < x.rows(); ++l) {
        double proj = 0.0;
        for (int k = 0; k < x.cols(); ++k) proj += psi_st(l, k) * dz(l, k);
        const CoefficientSet c =
            sched.per_position() ? sched.coeffs_at(s, t, l) : sched.coeffs(s, t);
        for (int k = 0; k < x.cols(); ++k) {
            const double delta = dz(l, k) - proj;
            log_arg(l, k) = stabilized ? c.gamma * c.lam_s - c.xi * delta
                                       : 1.0 - delta / c.kappa;
        }
    }
    return finish_logit_teacher(z_ss, std::move(log_arg), psi_st);
}

WeightedKl weighted_kl(const Mat& teacher_probs, const Mat& student_logits, double adaptive_c,
                       double adaptive_r, bool reverse_kl) {
    if (!teacher_probs.same_shape(student_logits))
        throw std::invalid_argument("weighted_kl: shape mismatch");
    const int L = teacher_probs.rows();
    const int K = teacher_probs.cols();

    WeightedKl out;
    out.cotangent = Mat(L, K);
    Mat q(L, K);
    double kl = 0.0;
    double delta_sq = 0.0;
    for (int l = 0; l < L; ++l) {
        const auto logq = log_softmax(
            std::span<const double>(student_logits.row(l), static_cast<size_t>(K)));
        for (int k = 0; k < K; ++k) q(l, k) = std::exp(logq[static_cast<size_t>(k)]);
        if (!reverse_kl) {
            for (int k = 0; k < K; ++k) {
                const double p = teacher_probs(l, k);
                if (p > 0.0) kl += p * (std::log(p) - logq[static_cast<size_t>(k)]);
            }
        } else {
            double f = 0.0;
            for (int k = 0; k < K; ++k) {
                const double p = teacher_probs(l, k);
                const double lp = std::log(p > 1e-300 ? p : 1e-300);
                f += q(l, k) * (logq[static_cast<size_t>(k)] - lp);
            }
            kl += f;
            for (int k = 0; k < K; ++k) {
                const double p = teacher_probs(l, k);
                const double lp = std::log(p > 1e-300 ? p : 1e-300);
                out.cotangent(l, k) = q(l, k) * (logq[static_cast<size_t>(k)] - lp - f);
            }
        }
        for (int k = 0; k < K; ++k) {
            const double d = q(l, k) - teacher_probs(l, k);
            delta_sq += d * d;
        }
    }
    kl /= L;
    out.kl = kl < 0.0 && kl > -1e-14 ? 0.0 : kl;
    out.delta_norm = std::sqrt(delta_sq);
    out.weight = std::pow(delta_sq + adaptive_c, -adaptive_r);
    out.loss = out.weight * out.kl;
    const double scale = out.weight / L;
    if (!reverse_kl) {
        for (int l = 0; l < L; ++l)
            for (int k = 0; k < K; ++k)
                out.cotangent(l, k) = scale * (q(l, k) - teacher_probs(l, k));
    } else {
        for (auto& v : out.cotangent.data()) v *= scale;
    }
    return out;
}

WeightNet::WeightNet(LearnableWeightMode mode, uint64_t seed, int hidden)
    : mode_(mode), hidden_(hidden) {
    if (mode_ == LearnableWeightMode::None) return;
    inputs_ = mode_ == LearnableWeightMode::OfS ? 1 : 2;
    // [W1 (hidden x inputs), b1, w2, b2]; w2 and b2 start at zero so the
    // initial weight is exactly 1.
    params_.assign(static_cast<size_t>(hidden_) * inputs_ + 2 * static_cast<size_t>(hidden_) + 1,
                   0.0);
    Rng rng(seed);
    const double a = 1.0 / std::sqrt(static_cast<double>(inputs_));
    for (int i = 0; i < hidden_ * inputs_; ++i)
        params_[static_cast<size_t>(i)] = (2.0 * rng.uniform() - 1.0) * a;
}

double WeightNet::log_weight(double s, double t) const {
    if (mode_ == LearnableWeightMode::None) return 0.0;
    const double in[2] = {s, t};
    const double* w1 = params_.data();
    const double* b1 = w1 + static_cast<size_t>(hidden_) * inputs_;
    const double* w2 = b1 + hidden_;
    const double b2 = w2[hidden_];
    double out = b2;
    for (int h = 0; h < hidden_; ++h) {
        double pre = b1[h];
        for (int i = 0; i < inputs_; ++i) pre += w1[static_cast<size_t>(h) * inputs_ + i] * in[i];
        out += w2[h] * std::tanh(pre);
    }
    return out;
}

double WeightNet::weight(double s, double t) const { return std::exp(log_weight(s, t)); }

void WeightNet::grad_log_weight(double s, double t, double upstream,
                                std::vector<double>& grad) const {
    if (mode_ == LearnableWeightMode::None) return;
    if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
    const double in[2] = {s, t};
    const double* w1 = params_.data();
    const double* b1 = w1 + static_cast<size_t>(hidden_) * inputs_;
    const double* w2 = b1 + hidden_;
    double* g1 = grad.data();
    double* gb1 = g1 + static_cast<size_t>(hidden_) * inputs_;
    double* gw2 = gb1 + hidden_;
    for (int h = 0; h < hidden_; ++h) {
        double pre = b1[h];
        for (int i = 0; i < inputs_; ++i) pre += w1[static_cast<size_t>(h) * inputs_ + i] * in[i];
        const double th = std::tanh(pre);
        gw2[h] += upstream * th;
        const double dpre = upstream * w2[h] * (1.0 - th * th);
        gb1[h] += dpre;
        for (int i = 0; i < inputs_; ++i) g1[static_cast<size_t>(h) * inputs_ + i] += dpre * in[i];
    }
    gw2[hidden_] += upstream;  // b2
}

std::vector<double> gradient_surgery(const std::vector<double>& g_diag,
                                     const std::vector<double>& g_cons) {
    if (g_diag.size() != g_cons.size())
        throw std::invalid_argument("gradient_surgery: length mismatch");
    double dot = 0.0, diag_sq = 0.0;
    for (size_t i = 0; i < g_diag.size(); ++i) {
        dot += g_cons[i] * g_diag[i];
        diag_sq += g_diag[i] * g_diag[i];
    }
    if (diag_sq == 0.0) return g_cons;
    std::vector<double> out(g_diag.size());
    const double proj = dot < 0.0 ? dot / diag_sq : 0.0;
    for (size_t i = 0; i < g_diag.size(); ++i)
        out[i] = g_diag[i] + g_cons[i] - proj * g_diag[i];
    return out;
}

// ---- batch drivers ----

namespace {

struct ChunkGrads {
    std::vector<std::vector<double>> model;
    std::vector<std::vector<double>> wnet;
};

constexpr int kChunk = 8;

int chunk_count(int n) { return (n + kChunk - 1) / kChunk; }

}  // namespace

DiagonalEval diagonal_loss(const DenoiserModel& model,
                           const std::vector<DiagonalBatchItem>& batch, const LossConfig& cfg) {
    if (batch.empty()) throw std::invalid_argument("diagonal_loss: empty batch");
    const int B = static_cast<int>(batch.size());
    const int L = model.arch().seq_len;
    const int K = model.arch().vocab_size;

    DiagonalEval eval;
    eval.weights.assign(static_cast<size_t>(B), 0.0);
    std::vector<double> losses(static_cast<size_t>(B), 0.0);
    std::vector<double> raw(static_cast<size_t>(B), 0.0);

    const int nchunks = chunk_count(B);
    std::vector<std::vector<double>> grads(static_cast<size_t>(nchunks));

    parallel_for(
        B,
        [&](int i) {
            const auto& item = batch[static_cast<size_t>(i)];
            const std::vector<int>* ctx = item.context.empty() ? nullptr : &item.context;
            DenoiserModel::Tape tape;
            const Mat z = model.forward_tape(item.x, item.t, item.t, ctx, tape);

            double ce = 0.0;
            Mat cot(L, K);
            double delta_sq = 0.0;
            for (int l = 0; l < L; ++l) {
                const auto logq =
                    log_softmax(std::span<const double>(z.row(l), static_cast<size_t>(K)));
                const int hot = item.target[static_cast<size_t>(l)];
                ce -= logq[static_cast<size_t>(hot)];
                for (int k = 0; k < K; ++k) {
                    const double q = std::exp(logq[static_cast<size_t>(k)]);
                    const double d = q - (k == hot ? 1.0 : 0.0);
                    cot(l, k) = d;
                    delta_sq += d * d;
                }
            }
            ce /= L;
            const double w = std::pow(delta_sq + cfg.adaptive_c, -cfg.adaptive_r);
            eval.weights[static_cast<size_t>(i)] = w;
            raw[static_cast<size_t>(i)] = ce;
            losses[static_cast<size_t>(i)] = w * ce;
            if (!std::isfinite(losses[static_cast<size_t>(i)]))
                throw std::runtime_error("diagonal_loss: non-finite loss");

            const double scale = w / (static_cast<double>(B) * L);
            cot *= scale;
            model.backward(tape, cot, grads[static_cast<size_t>(i / kChunk)]);
        },
        kChunk);

    eval.bundle.param_grad.assign(model.params().size(), 0.0);
    for (const auto& g : grads) {
        if (g.empty()) continue;
        for (size_t j = 0; j < g.size(); ++j) eval.bundle.param_grad[j] += g[j];
    }
    double total = 0.0, total_raw = 0.0;
    for (int i = 0; i < B; ++i) {
        total += losses[static_cast<size_t>(i)];
        total_raw += raw[static_cast<size_t>(i)];
    }
    eval.bundle.loss = total / B;
    eval.unweighted_loss = total_raw / B;
    return eval;
}

double diagonal_loss_frozen(const DenoiserModel& model,
                            const std::vector<DiagonalBatchItem>& batch,
                            const std::vector<double>& weights) {
    const int B = static_cast<int>(batch.size());
    double total = 0.0;
    for (int i = 0; i < B; ++i) {
        const auto& item = batch[static_cast<size_t>(i)];
        const std::vector<int>* ctx = item.context.empty() ? nullptr : &item.context;
        const Mat z = model.forward(item.x, item.t, item.t, ctx);
        double ce = 0.0;
        for (int l = 0; l < z.rows(); ++l)
            ce += cross_entropy_logits(item.target[static_cast<size_t>(l)],
                                       std::span<const double>(z.row(l),
                                                               static_cast<size_t>(z.cols())));
        total += weights[static_cast<size_t>(i)] * ce / z.rows();
    }
    return total / B;
}

namespace {

TeacherOutput make_teacher(const DenoiserModel& model, const ConsistencyBatchItem& item,
                           LossKind kind, const LossConfig& cfg) {
    const std::vector<int>* ctx = item.context.empty() ? nullptr : &item.context;
    ModelSource src(model, ctx);
    switch (kind) {
        case LossKind::Psd: return psd_teacher(src, item.x, item.s, item.u, item.t);
        case LossKind::Lsd:
            return lsd_teacher(src, item.x, item.s, item.t, cfg.stabilized_teachers);
        case LossKind::Esd: {
            const Mat drift = source_drift(src, item.x, item.s);
            return esd_teacher(src, item.x, item.s, item.t, drift, cfg.stabilized_teachers);
        }
        default: throw std::invalid_argument("consistency_loss: diagonal is not a teacher kind");
    }
}

}  // namespace

ConsistencyEval consistency_loss(const DenoiserModel& model,
                                 const std::vector<ConsistencyBatchItem>& batch, LossKind kind,
                                 const LossConfig& cfg, const WeightNet* weight_net) {
    if (batch.empty()) throw std::invalid_argument("consistency_loss: empty batch");
    const int B = static_cast<int>(batch.size());

    ConsistencyEval eval;
    eval.teacher_probs.resize(static_cast<size_t>(B));
    eval.adaptive_w.assign(static_cast<size_t>(B), 0.0);
    eval.learnable_w.assign(static_cast<size_t>(B), 1.0);

    const int nchunks = chunk_count(B);
    std::vector<std::vector<double>> grads(static_cast<size_t>(nchunks));
    std::vector<std::vector<double>> wgrads(static_cast<size_t>(nchunks));
    std::vector<double> losses(static_cast<size_t>(B), 0.0);
    std::vector<double> kls(static_cast<size_t>(B), 0.0);
    std::vector<int> clamped(static_cast<size_t>(B), 0), invalid(static_cast<size_t>(B), 0);

    parallel_for(
        B,
        [&](int i) {
            const auto& item = batch[static_cast<size_t>(i)];
            TeacherOutput teacher;
            try {
                teacher = make_teacher(model, item, kind, cfg);
            } catch (const TeacherInvalidError&) {
                invalid[static_cast<size_t>(i)] = 1;
                return;
            }
            if (teacher.diagnostics.clamped) clamped[static_cast<size_t>(i)] = 1;

            const std::vector<int>* ctx = item.context.empty() ? nullptr : &item.context;
            DenoiserModel::Tape tape;
            const Mat z = model.forward_tape(item.x, item.s, item.t, ctx, tape);
            WeightedKl wkl =
                weighted_kl(teacher.probs, z, cfg.adaptive_c, cfg.adaptive_r, cfg.reverse_kl);

            double lw = 1.0;
            if (weight_net && weight_net->mode() != LearnableWeightMode::None) {
                lw = weight_net->weight(item.s, item.t);
                // d/dphi [lw * wloss - log lw] = (lw * wloss - 1) dlogw/dphi
                weight_net->grad_log_weight(item.s, item.t, (lw * wkl.loss - 1.0) / B,
                                            wgrads[static_cast<size_t>(i / kChunk)]);
            }
            losses[static_cast<size_t>(i)] = lw * wkl.loss - std::log(lw);
            kls[static_cast<size_t>(i)] = wkl.kl;
            eval.teacher_probs[static_cast<size_t>(i)] = std::move(teacher.probs);
            eval.adaptive_w[static_cast<size_t>(i)] = wkl.weight;
            eval.learnable_w[static_cast<size_t>(i)] = lw;

            wkl.cotangent *= lw / B;
            model.backward(tape, wkl.cotangent, grads[static_cast<size_t>(i / kChunk)]);
        },
        kChunk);

    eval.bundle.param_grad.assign(model.params().size(), 0.0);
    for (const auto& g : grads) {
        if (g.empty()) continue;
        for (size_t j = 0; j < g.size(); ++j) eval.bundle.param_grad[j] += g[j];
    }
    if (weight_net) {
        eval.weightnet_grad.assign(weight_net->param_count(), 0.0);
        for (const auto& g : wgrads) {
            if (g.empty()) continue;
            for (size_t j = 0; j < g.size(); ++j) eval.weightnet_grad[j] += g[j];
        }
    }
    double total = 0.0, total_kl = 0.0;
    int valid = 0;
    for (int i = 0; i < B; ++i) {
        total += losses[static_cast<size_t>(i)];
        total_kl += kls[static_cast<size_t>(i)];
        eval.clamped_items += clamped[static_cast<size_t>(i)];
        eval.invalid_items += invalid[static_cast<size_t>(i)];
        valid += invalid[static_cast<size_t>(i)] ? 0 : 1;
    }
    eval.bundle.loss = total / B;
    eval.mean_kl = valid > 0 ? total_kl / valid : 0.0;
    return eval;
}

double consistency_loss_frozen(const DenoiserModel& model,
                               const std::vector<ConsistencyBatchItem>& batch,
                               const std::vector<Mat>& teacher_probs,
                               const std::vector<double>& adaptive_w,
                               const std::vector<double>& learnable_w, bool reverse_kl) {
    const int B = static_cast<int>(batch.size());
    double total = 0.0;
    for (int i = 0; i < B; ++i) {
        const auto& p = teacher_probs[static_cast<size_t>(i)];
        if (p.size() == 0) continue;  // teacher-invalid item
        const auto& item = batch[static_cast<size_t>(i)];
        const std::vector<int>* ctx = item.context.empty() ? nullptr : &item.context;
        const Mat z = model.forward(item.x, item.s, item.t, ctx);
        const int L = z.rows(), K = z.cols();
        double kl = 0.0;
        for (int l = 0; l < L; ++l) {
            const auto logq =
                log_softmax(std::span<const double>(z.row(l), static_cast<size_t>(K)));
            if (!reverse_kl) {
                for (int k = 0; k < K; ++k)
                    if (p(l, k) > 0.0)
                        kl += p(l, k) * (std::log(p(l, k)) - logq[static_cast<size_t>(k)]);
            } else {
                for (int k = 0; k < K; ++k) {
                    const double q = std::exp(logq[static_cast<size_t>(k)]);
                    const double lp = std::log(p(l, k) > 1e-300 ? p(l, k) : 1e-300);
                    kl += q * (logq[static_cast<size_t>(k)] - lp);
                }
            }
        }
        kl /= L;
        const double lw = learnable_w[static_cast<size_t>(i)];
        total += lw * adaptive_w[static_cast<size_t>(i)] * kl - std::log(lw);
    }
    return total / B;
}

}  // namespace dfm
