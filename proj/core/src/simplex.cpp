#include "dfm/simplex.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dfm {

SimplexPoint::SimplexPoint(std::vector<double> p) : probs(std::move(p)) {
    if (probs.size() < 2) throw std::invalid_argument("SimplexPoint: need K >= 2");
    double sum = 0.0;
    for (double v : probs) {
        if (!(v >= -kSimplexSumTol)) throw std::invalid_argument("SimplexPoint: negative entry");
        sum += v;
    }
    if (std::abs(sum - 1.0) > kSimplexSumTol)
        throw std::invalid_argument("SimplexPoint: entries do not sum to 1");
    for (double& v : probs) {
        if (v < 0.0) v = 0.0;
        v /= sum;
    }
}

void softmax_inplace(std::span<double> z) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z) {
        if (std::isnan(v)) throw std::invalid_argument("softmax: NaN logit");
        if (v > m) m = v;
    }
    double sum = 0.0;
    for (double& v : z) {
        v = std::exp(v - m);
        sum += v;
    }
    for (double& v : z) v /= sum;
}

std::vector<double> softmax(std::span<const double> z) {
    std::vector<double> out(z.begin(), z.end());
    softmax_inplace(out);
    return out;
}

std::vector<double> log_softmax(std::span<const double> z) {
    double m = -std::numeric_limits<double>::infinity();
    for (double v : z) {
        if (std::isnan(v)) throw std::invalid_argument("log_softmax: NaN logit");
        if (v > m) m = v;
    }
    double sum = 0.0;
    for (double v : z) sum += std::exp(v - m);
    const double lse = m + std::log(sum);
    std::vector<double> out(z.size());
    for (size_t i = 0; i < z.size(); ++i) out[i] = z[i] - lse;
    return out;
}

SimplexPoint softmax_point(const LogitVector& z) {
    SimplexPoint p;
    p.probs = softmax(z.logits);
    return p;
}

Mat softmax_rows(const Mat& logits) {
    Mat out = logits;
    for (int r = 0; r < out.rows(); ++r)
        softmax_inplace(std::span<double>(out.row(r), static_cast<size_t>(out.cols())));
    return out;
}

double kl_div(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) throw std::invalid_argument("kl_div: size mismatch");
    double kl = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;  // 0 log 0 = 0
        if (q[i] <= 0.0) throw std::overflow_error("kl_div: q is zero where p > 0");
        kl += p[i] * (std::log(p[i]) - std::log(q[i]));
    }
    return kl < 0.0 && kl > -1e-15 ? 0.0 : kl;
}

double kl_div(const SimplexPoint& p, const SimplexPoint& q) {
    return kl_div(std::span<const double>(p.probs), std::span<const double>(q.probs));
}

double cross_entropy(const SimplexPoint& target_onehot, const SimplexPoint& pred) {
    int hot = -1;
    for (int k = 0; k < target_onehot.size(); ++k) {
        if (target_onehot[k] > 0.5) {
            if (hot >= 0) throw std::invalid_argument("cross_entropy: target not one-hot");
            hot = k;
        }
    }
    if (hot < 0) throw std::invalid_argument("cross_entropy: target not one-hot");
    const double pk = pred[hot];
    if (pk <= 0.0) throw std::overflow_error("cross_entropy: zero predicted mass at target");
    return -std::log(pk);
}

double cross_entropy_logits(int hot, std::span<const double> logits) {
    if (hot < 0 || static_cast<size_t>(hot) >= logits.size())
        throw std::out_of_range("cross_entropy_logits: hot index out of range");
    return -log_softmax(logits)[static_cast<size_t>(hot)];
}

SimplexPoint one_hot(int k, int vocab) {
    if (k < 0 || k >= vocab) throw std::out_of_range("one_hot: index out of range");
    SimplexPoint p;
    p.probs.assign(static_cast<size_t>(vocab), 0.0);
    p.probs[static_cast<size_t>(k)] = 1.0;
    return p;
}

int decode_argmax(std::span<const double> p) {
    if (p.empty()) throw std::invalid_argument("decode_argmax: empty vector");
    int best = 0;
    for (size_t i = 1; i < p.size(); ++i)
        if (p[i] > p[static_cast<size_t>(best)]) best = static_cast<int>(i);
    return best;
}

int decode_argmax(const SimplexPoint& p) {
    return decode_argmax(std::span<const double>(p.probs));
}

}  // namespace dfm
