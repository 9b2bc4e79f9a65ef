#pragma once

// Exactly enumerable categorical distribution over token sequences: the
// ground truth p1 for oracle computations and total-variation metrics.

#include <string>
#include <vector>

#include "dfm/rng.hpp"

namespace dfm {

class ToyDistribution {
public:
    ToyDistribution(int seq_len, int vocab_size, std::vector<double> joint_probs);

    static ToyDistribution random_full_support(int seq_len, int vocab_size, Rng& rng);
    // Independent per-position categoricals; marginals[l] has K entries.
    static ToyDistribution product(const std::vector<std::vector<double>>& marginals);

    int seq_len() const { return seq_len_; }
    int vocab_size() const { return vocab_size_; }
    size_t num_sequences() const { return joint_.size(); }
    const std::vector<double>& joint() const { return joint_; }

    double prob(size_t index) const { return joint_[index]; }
    double prob(const std::vector<int>& tokens) const { return joint_[index_of(tokens)]; }

    size_t index_of(const std::vector<int>& tokens) const;
    std::vector<int> tokens_of(size_t index) const;

    std::vector<int> sample(Rng& rng) const;

    // Marginal distribution of one position (K entries).
    std::vector<double> marginal(int position) const;

    // Text format: "L K" header, then K^L lines "tok1 ... tokL prob".
    static ToyDistribution load(const std::string& path);
    void save(const std::string& path) const;

private:
    int seq_len_;
    int vocab_size_;
    std::vector<double> joint_;
    std::vector<double> cdf_;
};

}  // namespace dfm
