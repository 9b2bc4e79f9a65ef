#pragma once

// Probability-simplex and logit-space primitives. All loss-facing arithmetic
// stays in log space; probabilities are materialized at API boundaries.

#include <span>
#include <vector>

#include "dfm/mat.hpp"

namespace dfm {

// A point on the simplex: entries >= 0, sum 1 within 1e-9 at construction
// (renormalized exactly afterwards).
struct SimplexPoint {
    std::vector<double> probs;

    SimplexPoint() = default;
    explicit SimplexPoint(std::vector<double> p);

    int size() const { return static_cast<int>(probs.size()); }
    double operator[](int k) const { return probs[static_cast<size_t>(k)]; }
};

// Unconstrained logit lift z of a simplex point; defined up to shifts of the
// all-ones vector.
struct LogitVector {
    std::vector<double> logits;
};

struct TokenSeq {
    std::vector<int> tokens;
    std::vector<int> context;  // optional conditioning prefix

    int length() const { return static_cast<int>(tokens.size()); }
};

constexpr double kSimplexSumTol = 1e-9;

// Max-subtracted stable softmax / log-softmax.
void softmax_inplace(std::span<double> z);
std::vector<double> softmax(std::span<const double> z);
std::vector<double> log_softmax(std::span<const double> z);
SimplexPoint softmax_point(const LogitVector& z);

// Row-wise softmax of an L x K logit matrix.
Mat softmax_rows(const Mat& logits);

// KL(p || q) with 0 log 0 := 0. Throws std::overflow_error if q has a zero
// where p is positive.
double kl_div(std::span<const double> p, std::span<const double> q);
double kl_div(const SimplexPoint& p, const SimplexPoint& q);

// Cross-entropy of a one-hot target against a prediction: -log pred[hot].
double cross_entropy(const SimplexPoint& target_onehot, const SimplexPoint& pred);
// Log-space variant used by the losses: -log_softmax(logits)[hot].
double cross_entropy_logits(int hot, std::span<const double> logits);

SimplexPoint one_hot(int k, int vocab);
// Argmax with ties broken toward the lowest index.
int decode_argmax(std::span<const double> p);
int decode_argmax(const SimplexPoint& p);

}  // namespace dfm
