#include "dfm/toy_dist.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace dfm {

namespace {

size_t pow_size(int base, int exp) {
    size_t v = 1;
    for (int i = 0; i < exp; ++i) {
        v *= static_cast<size_t>(base);
        if (v > (1ull << 20)) throw std::invalid_argument("ToyDistribution: K^L exceeds 2^20");
    }
    return v;
}

}  // namespace

ToyDistribution::ToyDistribution(int seq_len, int vocab_size, std::vector<double> joint_probs)
    : seq_len_(seq_len), vocab_size_(vocab_size), joint_(std::move(joint_probs)) {
    if (seq_len_ < 1 || vocab_size_ < 2) throw std::invalid_argument("ToyDistribution: bad shape");
    if (joint_.size() != pow_size(vocab_size_, seq_len_))
        throw std::invalid_argument("ToyDistribution: joint table has wrong size");
    double sum = 0.0;
    for (double p : joint_) {
        if (!(p >= 0.0)) throw std::invalid_argument("ToyDistribution: negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw std::invalid_argument("ToyDistribution: probabilities do not sum to 1");
    for (double& p : joint_) p /= sum;
    cdf_.resize(joint_.size());
    double acc = 0.0;
    for (size_t i = 0; i < joint_.size(); ++i) {
        acc += joint_[i];
        cdf_[i] = acc;
    }
    cdf_.back() = 1.0;
}

ToyDistribution ToyDistribution::random_full_support(int seq_len, int vocab_size, Rng& rng) {
    const size_t n = pow_size(vocab_size, seq_len);
    std::vector<double> p(n);
    double sum = 0.0;
    for (auto& v : p) {
        // Exp(1) draws normalize to a flat Dirichlet sample: full support.
        double u = rng.uniform();
        while (u <= 0.0) u = rng.uniform();
        v = -std::log(u);
        sum += v;
    }
    for (auto& v : p) v /= sum;
    return ToyDistribution(seq_len, vocab_size, std::move(p));
}

ToyDistribution ToyDistribution::product(const std::vector<std::vector<double>>& marginals) {
    const int L = static_cast<int>(marginals.size());
    if (L < 1) throw std::invalid_argument("ToyDistribution::product: empty marginals");
    const int K = static_cast<int>(marginals[0].size());
    for (const auto& m : marginals)
        if (static_cast<int>(m.size()) != K)
            throw std::invalid_argument("ToyDistribution::product: ragged marginals");
    const size_t n = pow_size(K, L);
    std::vector<double> p(n, 1.0);
    for (size_t idx = 0; idx < n; ++idx) {
        size_t rest = idx;
        for (int l = L - 1; l >= 0; --l) {
            p[idx] *= marginals[static_cast<size_t>(l)][rest % static_cast<size_t>(K)];
            rest /= static_cast<size_t>(K);
        }
    }
    double sum = 0.0;
    for (double v : p) sum += v;
    for (double& v : p) v /= sum;
    return ToyDistribution(L, K, std::move(p));
}

size_t ToyDistribution::index_of(const std::vector<int>& tokens) const {
    if (static_cast<int>(tokens.size()) != seq_len_)
        throw std::invalid_argument("ToyDistribution: token length mismatch");
    size_t idx = 0;
    for (int tok : tokens) {
        if (tok < 0 || tok >= vocab_size_) throw std::out_of_range("ToyDistribution: bad token");
        idx = idx * static_cast<size_t>(vocab_size_) + static_cast<size_t>(tok);
    }
    return idx;
}

std::vector<int> ToyDistribution::tokens_of(size_t index) const {
    std::vector<int> toks(static_cast<size_t>(seq_len_));
    for (int l = seq_len_ - 1; l >= 0; --l) {
        toks[static_cast<size_t>(l)] = static_cast<int>(index % static_cast<size_t>(vocab_size_));
        index /= static_cast<size_t>(vocab_size_);
    }
    return toks;
}

std::vector<int> ToyDistribution::sample(Rng& rng) const {
    const double u = rng.uniform();
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    size_t idx = static_cast<size_t>(it - cdf_.begin());
    if (idx >= joint_.size()) idx = joint_.size() - 1;
    return tokens_of(idx);
}

std::vector<double> ToyDistribution::marginal(int position) const {
    if (position < 0 || position >= seq_len_)
        throw std::out_of_range("ToyDistribution: bad position");
    std::vector<double> m(static_cast<size_t>(vocab_size_), 0.0);
    size_t stride = 1;
    for (int l = seq_len_ - 1; l > position; --l) stride *= static_cast<size_t>(vocab_size_);
    for (size_t idx = 0; idx < joint_.size(); ++idx)
        m[(idx / stride) % static_cast<size_t>(vocab_size_)] += joint_[idx];
    return m;
}

ToyDistribution ToyDistribution::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("ToyDistribution: cannot open " + path);
    int L = 0, K = 0;
    if (!(in >> L >> K)) throw std::runtime_error("ToyDistribution: bad header in " + path);
    const size_t n = pow_size(K, L);
    std::vector<double> p(n, -1.0);
    std::vector<int> toks(static_cast<size_t>(L));
    for (size_t line = 0; line < n; ++line) {
        for (int l = 0; l < L; ++l)
            if (!(in >> toks[static_cast<size_t>(l)]))
                throw std::runtime_error("ToyDistribution: truncated file " + path);
        double prob;
        if (!(in >> prob)) throw std::runtime_error("ToyDistribution: truncated file " + path);
        size_t idx = 0;
        for (int tok : toks) {
            if (tok < 0 || tok >= K) throw std::runtime_error("ToyDistribution: token out of range");
            idx = idx * static_cast<size_t>(K) + static_cast<size_t>(tok);
        }
        if (p[idx] >= 0.0) throw std::runtime_error("ToyDistribution: duplicate sequence line");
        p[idx] = prob;
    }
    for (double v : p)
        if (v < 0.0) throw std::runtime_error("ToyDistribution: missing sequence line");
    return ToyDistribution(L, K, std::move(p));
}

void ToyDistribution::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("ToyDistribution: cannot write " + path);
    out << seq_len_ << ' ' << vocab_size_ << '\n';
    char buf[40];
    for (size_t idx = 0; idx < joint_.size(); ++idx) {
        const auto toks = tokens_of(idx);
        for (int tok : toks) out << tok << ' ';
        std::snprintf(buf, sizeof(buf), "%.17g", joint_[idx]);
        out << buf << '\n';
    }
}

}  // namespace dfm
