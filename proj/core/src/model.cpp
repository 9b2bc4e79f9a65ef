#include "dfm/model.hpp"

#include <cmath>
#include <stdexcept>

#include "dfm/dual.hpp"
#include "dfm/rng.hpp"

namespace dfm {

int DenoiserModel::feature_dim(const ModelArch& arch) {
    int d = arch.vocab_size + arch.seq_len + 2;
    if (arch.conditional) d += 2 * arch.vocab_size + 1;
    return d;
}

size_t DenoiserModel::param_count(const ModelArch& arch) {
    const size_t h = static_cast<size_t>(arch.hidden_width);
    const size_t k = static_cast<size_t>(arch.vocab_size);
    const size_t din = static_cast<size_t>(feature_dim(arch));
    return h * (din + 1) + h * (2 * h + 1) +
           static_cast<size_t>(arch.n_layers - 1) * h * (h + 1) + k * (h + 1);
}

DenoiserModel::DenoiserModel(ModelArch arch, Schedule sched, uint64_t seed)
    : arch_(arch), sched_(std::move(sched)) {
    if (arch_.hidden_width < 1) throw std::invalid_argument("DenoiserModel: zero-width layer");
    if (arch_.n_layers < 1) throw std::invalid_argument("DenoiserModel: need n_layers >= 1");
    if (arch_.seq_len < 1 || arch_.vocab_size < 2)
        throw std::invalid_argument("DenoiserModel: bad sequence shape");
    din_ = feature_dim(arch_);

    const size_t h = static_cast<size_t>(arch_.hidden_width);
    const size_t k = static_cast<size_t>(arch_.vocab_size);
    const size_t din = static_cast<size_t>(din_);
    size_t off = 0;
    off_enc_w_ = off;
    off += h * din;
    off_enc_b_ = off;
    off += h;
    off_mix_w_ = off;
    off += h * h;
    off_mix_u_ = off;
    off += h * h;
    off_mix_b_ = off;
    off += h;
    for (int j = 0; j < arch_.n_layers - 1; ++j) {
        off_extra_w_.push_back(off);
        off += h * h;
        off_extra_b_.push_back(off);
        off += h;
    }
    off_out_w_ = off;
    off += k * h;
    off_out_b_ = off;
    off += k;
    params_.assign(off, 0.0);

    // Scaled uniform fan-in init, biases zero; deterministic in layout order.
    Rng rng(seed);
    auto fill = [&](size_t offset, size_t rows, size_t cols, size_t fan_in) {
        const double a = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (size_t i = 0; i < rows * cols; ++i)
            params_[offset + i] = (2.0 * rng.uniform() - 1.0) * a;
    };
    fill(off_enc_w_, h, din, din);
    fill(off_mix_w_, h, h, 2 * h);
    fill(off_mix_u_, h, h, 2 * h);
    for (int j = 0; j < arch_.n_layers - 1; ++j)
        fill(off_extra_w_[static_cast<size_t>(j)], h, h, h);
    fill(off_out_w_, k, h, h);
}

void DenoiserModel::check_inputs(const Mat& x, double s, double t,
                                 const std::vector<int>* context) const {
    if (x.rows() != arch_.seq_len || x.cols() != arch_.vocab_size)
        throw std::invalid_argument("DenoiserModel: state shape mismatch");
    for (double v : x.data())
        if (!std::isfinite(v)) throw std::invalid_argument("DenoiserModel: non-finite input");
    if (!(s >= 0.0 && s <= t && t <= 1.0))
        throw std::domain_error("DenoiserModel: need 0 <= s <= t <= 1");
    if (context && !context->empty()) {
        if (!arch_.conditional)
            throw std::invalid_argument("DenoiserModel: context given to unconditional model");
        if (static_cast<int>(context->size()) > arch_.max_context)
            throw std::invalid_argument("DenoiserModel: context exceeds max_context");
        for (int tok : *context)
            if (tok < 0 || tok >= arch_.vocab_size)
                throw std::out_of_range("DenoiserModel: context token out of range");
    }
}

template <typename S>
MatT<S> DenoiserModel::build_features(const MatT<S>& x, const std::vector<S>& beta_s,
                                      const std::vector<S>& beta_t,
                                      const std::vector<int>* context) const {
    const int L = arch_.seq_len;
    const int K = arch_.vocab_size;
    MatT<S> f(L, din_);
    const bool has_ctx = context && !context->empty();
    for (int l = 0; l < L; ++l) {
        int d = 0;
        for (int k = 0; k < K; ++k) f(l, d++) = x(l, k);
        for (int p = 0; p < L; ++p) f(l, d++) = S(p == l ? 1.0 : 0.0);
        f(l, d++) = beta_s[static_cast<size_t>(l)];
        f(l, d++) = beta_t[static_cast<size_t>(l)];
        if (arch_.conditional) {
            // mean one-hot over the context, one-hot of its last token, flag
            if (has_ctx) {
                const double inv = 1.0 / static_cast<double>(context->size());
                for (int k = 0; k < K; ++k) {
                    double cnt = 0.0;
                    for (int tok : *context) cnt += tok == k ? 1.0 : 0.0;
                    f(l, d + k) = S(cnt * inv);
                }
                d += K;
                const int last = context->back();
                for (int k = 0; k < K; ++k) f(l, d++) = S(k == last ? 1.0 : 0.0);
                f(l, d++) = S(1.0);
            } else {
                for (int k = 0; k < 2 * K + 1; ++k) f(l, d++) = S(0.0);
            }
        }
    }
    return f;
}

template <typename S>
void DenoiserModel::run(const MatT<S>& f, MatT<S>& z, Tape* tape) const {
    using std::tanh;  // keep the double overload visible next to dfm::tanh(Dual)
    const int L = arch_.seq_len;
    const int K = arch_.vocab_size;
    const int H = arch_.hidden_width;
    const double* p = params_.data();

    MatT<S> h0(L, H);
    for (int l = 0; l < L; ++l) {
        const S* fl = f.row(l);
        for (int h = 0; h < H; ++h) {
            S acc = S(p[off_enc_b_ + static_cast<size_t>(h)]);
            const double* w = p + off_enc_w_ + static_cast<size_t>(h) * din_;
            for (int d = 0; d < din_; ++d) acc += S(w[d]) * fl[d];
            h0(l, h) = tanh(acc);
        }
    }

    std::vector<S> pool(static_cast<size_t>(H), S(0.0));
    const double invL = 1.0 / L;
    for (int l = 0; l < L; ++l)
        for (int h = 0; h < H; ++h) pool[static_cast<size_t>(h)] += h0(l, h) * S(invL);

    // U * pool is shared by every position.
    std::vector<S> upool(static_cast<size_t>(H), S(0.0));
    for (int h = 0; h < H; ++h) {
        S acc = S(0.0);
        const double* u = p + off_mix_u_ + static_cast<size_t>(h) * H;
        for (int j = 0; j < H; ++j) acc += S(u[j]) * pool[static_cast<size_t>(j)];
        upool[static_cast<size_t>(h)] = acc;
    }

    MatT<S> h1(L, H);
    for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
            S acc = S(p[off_mix_b_ + static_cast<size_t>(h)]) + upool[static_cast<size_t>(h)];
            const double* w = p + off_mix_w_ + static_cast<size_t>(h) * H;
            for (int j = 0; j < H; ++j) acc += S(w[j]) * h0(l, j);
            h1(l, h) = tanh(acc);
        }
    }

    std::vector<MatT<S>> extra;
    const MatT<S>* cur = &h1;
    for (int layer = 0; layer < arch_.n_layers - 1; ++layer) {
        MatT<S> nxt(L, H);
        const size_t ow = off_extra_w_[static_cast<size_t>(layer)];
        const size_t ob = off_extra_b_[static_cast<size_t>(layer)];
        for (int l = 0; l < L; ++l) {
            for (int h = 0; h < H; ++h) {
                S acc = S(p[ob + static_cast<size_t>(h)]);
                const double* w = p + ow + static_cast<size_t>(h) * H;
                for (int j = 0; j < H; ++j) acc += S(w[j]) * (*cur)(l, j);
                nxt(l, h) = tanh(acc);
            }
        }
        extra.push_back(std::move(nxt));
        cur = &extra.back();
    }

    z = MatT<S>(L, K);
    for (int l = 0; l < L; ++l) {
        for (int k = 0; k < K; ++k) {
            S acc = S(p[off_out_b_ + static_cast<size_t>(k)]);
            const double* w = p + off_out_w_ + static_cast<size_t>(k) * H;
            for (int j = 0; j < H; ++j) acc += S(w[j]) * (*cur)(l, j);
            z(l, k) = acc;
        }
    }

    if (tape) {
        if constexpr (std::is_same_v<S, double>) {
            tape->h0 = h0;
            tape->pool.assign(pool.begin(), pool.end());
            tape->h1 = h1;
            tape->extra = extra;
            tape->z = z;
        }
    }
}

namespace {

std::vector<double> beta_values(const Schedule& sched, double t, int L) {
    std::vector<double> out(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l)
        out[static_cast<size_t>(l)] =
            sched.per_position() ? sched.beta_at(t, l) : sched.beta(t);
    return out;
}

}  // namespace

Mat DenoiserModel::forward(const Mat& x, double s, double t,
                           const std::vector<int>* context) const {
    check_inputs(x, s, t, context);
    const Mat f = build_features(x, beta_values(sched_, s, arch_.seq_len),
                                 beta_values(sched_, t, arch_.seq_len), context);
    Mat z;
    run(f, z, nullptr);
    return z;
}

Mat DenoiserModel::forward_tape(const Mat& x, double s, double t,
                                const std::vector<int>* context, Tape& tape) const {
    check_inputs(x, s, t, context);
    tape.features = build_features(x, beta_values(sched_, s, arch_.seq_len),
                                   beta_values(sched_, t, arch_.seq_len), context);
    Mat z;
    run(tape.features, z, &tape);
    return z;
}

DenoiserModel::JvpResult DenoiserModel::jvp(const Mat& x, double s, double t, const Mat* xdot,
                                            double sdot, double tdot,
                                            const std::vector<int>* context) const {
    check_inputs(x, s, t, context);
    const int L = arch_.seq_len;
    const int K = arch_.vocab_size;
    MatT<Dual> xd(L, K);
    for (int l = 0; l < L; ++l)
        for (int k = 0; k < K; ++k) xd(l, k) = Dual(x(l, k), xdot ? (*xdot)(l, k) : 0.0);

    std::vector<Dual> bs(static_cast<size_t>(L)), bt(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l) {
        if (sched_.per_position()) {
            bs[static_cast<size_t>(l)] = Dual(sched_.beta_at(s, l), sched_.beta_dot_at(s, l) * sdot);
            bt[static_cast<size_t>(l)] = Dual(sched_.beta_at(t, l), sched_.beta_dot_at(t, l) * tdot);
        } else {
            bs[static_cast<size_t>(l)] = Dual(sched_.beta(s), sched_.beta_dot(s) * sdot);
            bt[static_cast<size_t>(l)] = Dual(sched_.beta(t), sched_.beta_dot(t) * tdot);
        }
    }

    const MatT<Dual> f = build_features(xd, bs, bt, context);
    MatT<Dual> zd;
    run(f, zd, nullptr);

    JvpResult out;
    out.z = Mat(L, K);
    out.dz = Mat(L, K);
    for (int l = 0; l < L; ++l)
        for (int k = 0; k < K; ++k) {
            out.z(l, k) = zd(l, k).v;
            out.dz(l, k) = zd(l, k).d;
        }
    return out;
}

void DenoiserModel::backward(const Tape& tape, const Mat& upstream,
                             std::vector<double>& grad) const {
    const int L = arch_.seq_len;
    const int K = arch_.vocab_size;
    const int H = arch_.hidden_width;
    if (upstream.rows() != L || upstream.cols() != K)
        throw std::invalid_argument("backward: cotangent shape mismatch");
    if (grad.size() != params_.size()) grad.assign(params_.size(), 0.0);
    const double* p = params_.data();
    double* g = grad.data();

    const Mat& hlast = arch_.n_layers > 1 ? tape.extra.back() : tape.h1;

    // output head
    Mat delta(L, H);
    for (int l = 0; l < L; ++l) {
        for (int k = 0; k < K; ++k) {
            const double up = upstream(l, k);
            if (up == 0.0) continue;
            double* gw = g + off_out_w_ + static_cast<size_t>(k) * H;
            const double* w = p + off_out_w_ + static_cast<size_t>(k) * H;
            for (int h = 0; h < H; ++h) {
                gw[h] += up * hlast(l, h);
                delta(l, h) += up * w[h];
            }
            g[off_out_b_ + static_cast<size_t>(k)] += up;
        }
    }

    // plain layers, last to first
    for (int layer = arch_.n_layers - 2; layer >= 0; --layer) {
        const Mat& out = tape.extra[static_cast<size_t>(layer)];
        const Mat& in = layer == 0 ? tape.h1 : tape.extra[static_cast<size_t>(layer - 1)];
        const size_t ow = off_extra_w_[static_cast<size_t>(layer)];
        const size_t ob = off_extra_b_[static_cast<size_t>(layer)];
        Mat next_delta(L, H);
        for (int l = 0; l < L; ++l) {
            for (int h = 0; h < H; ++h) {
                const double dpre = delta(l, h) * (1.0 - out(l, h) * out(l, h));
                if (dpre == 0.0) continue;
                double* gw = g + ow + static_cast<size_t>(h) * H;
                const double* w = p + ow + static_cast<size_t>(h) * H;
                for (int j = 0; j < H; ++j) {
                    gw[j] += dpre * in(l, j);
                    next_delta(l, j) += dpre * w[j];
                }
                g[ob + static_cast<size_t>(h)] += dpre;
            }
        }
        delta = std::move(next_delta);
    }

    // mixing layer
    Mat dpre1(L, H);
    std::vector<double> dpre1_sum(static_cast<size_t>(H), 0.0);
    for (int l = 0; l < L; ++l)
        for (int h = 0; h < H; ++h) {
            dpre1(l, h) = delta(l, h) * (1.0 - tape.h1(l, h) * tape.h1(l, h));
            dpre1_sum[static_cast<size_t>(h)] += dpre1(l, h);
        }

    Mat delta_h0(L, H);
    for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
            const double dp = dpre1(l, h);
            if (dp == 0.0) continue;
            double* gw = g + off_mix_w_ + static_cast<size_t>(h) * H;
            const double* w = p + off_mix_w_ + static_cast<size_t>(h) * H;
            for (int j = 0; j < H; ++j) {
                gw[j] += dp * tape.h0(l, j);
                delta_h0(l, j) += dp * w[j];
            }
            g[off_mix_b_ + static_cast<size_t>(h)] += dp;
        }
    }
    // pool path: dL/dpool, then spread uniformly over positions
    std::vector<double> dpool(static_cast<size_t>(H), 0.0);
    for (int h = 0; h < H; ++h) {
        const double ds = dpre1_sum[static_cast<size_t>(h)];
        if (ds == 0.0) continue;
        double* gu = g + off_mix_u_ + static_cast<size_t>(h) * H;
        const double* u = p + off_mix_u_ + static_cast<size_t>(h) * H;
        for (int j = 0; j < H; ++j) {
            gu[j] += ds * tape.pool[static_cast<size_t>(j)];
            dpool[static_cast<size_t>(j)] += ds * u[j];
        }
    }
    const double invL = 1.0 / L;
    for (int l = 0; l < L; ++l)
        for (int j = 0; j < H; ++j) delta_h0(l, j) += dpool[static_cast<size_t>(j)] * invL;

    // encoder
    for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
            const double dpre = delta_h0(l, h) * (1.0 - tape.h0(l, h) * tape.h0(l, h));
            if (dpre == 0.0) continue;
            double* gw = g + off_enc_w_ + static_cast<size_t>(h) * din_;
            const double* f = tape.features.row(l);
            for (int d = 0; d < din_; ++d) gw[d] += dpre * f[d];
            g[off_enc_b_ + static_cast<size_t>(h)] += dpre;
        }
    }
}

GradBundle DenoiserModel::backward(const Mat& upstream, const Mat& x, double s, double t,
                                   const std::vector<int>* context) const {
    Tape tape;
    const Mat z = forward_tape(x, s, t, context, tape);
    GradBundle out;
    double loss = 0.0;
    for (size_t i = 0; i < z.size(); ++i) loss += upstream.data()[i] * z.data()[i];
    out.loss = loss;
    out.param_grad.assign(params_.size(), 0.0);
    backward(tape, upstream, out.param_grad);
    return out;
}

template MatT<double> DenoiserModel::build_features<double>(const MatT<double>&,
                                                            const std::vector<double>&,
                                                            const std::vector<double>&,
                                                            const std::vector<int>*) const;
template MatT<Dual> DenoiserModel::build_features<Dual>(const MatT<Dual>&,
                                                        const std::vector<Dual>&,
                                                        const std::vector<Dual>&,
                                                        const std::vector<int>*) const;
template void DenoiserModel::run<double>(const MatT<double>&, MatT<double>&, Tape*) const;
template void DenoiserModel::run<Dual>(const MatT<Dual>&, MatT<Dual>&, Tape*) const;

}  // namespace dfm
