#pragma once

// Training data sources: enumerable toys (oracle checks available), a
// conditional toy task for guidance experiments, and char-level corpora
// (empirical p1 not enumerable; metrics fall back to bigram statistics).

#include <memory>
#include <string>
#include <vector>

#include "dfm/config.hpp"
#include "dfm/rng.hpp"
#include "dfm/toy_dist.hpp"

namespace dfm {

class DataSource {
public:
    virtual ~DataSource() = default;
    virtual int seq_len() const = 0;
    virtual int vocab_size() const = 0;
    virtual bool conditional() const { return false; }
    // Draws a clean target sequence and its conditioning context; the context
    // comes back empty when unconditional or dropped for guidance training.
    virtual void sample(Rng& rng, std::vector<int>& target, std::vector<int>& context) const = 0;
    virtual const ToyDistribution* oracle() const { return nullptr; }
};

class ToyData : public DataSource {
public:
    explicit ToyData(ToyDistribution dist) : dist_(std::move(dist)) {}
    int seq_len() const override { return dist_.seq_len(); }
    int vocab_size() const override { return dist_.vocab_size(); }
    void sample(Rng& rng, std::vector<int>& target, std::vector<int>& context) const override {
        context.clear();
        target = dist_.sample(rng);
    }
    const ToyDistribution* oracle() const override { return &dist_; }

private:
    ToyDistribution dist_;
};

// Context is one uniform token c; each continuation position equals c with
// probability peak and is uniform otherwise. The context is dropped with
// probability ctx_dropout so the same network also learns the unconditional
// marginal (classifier-free guidance training).
class ConditionalToyData : public DataSource {
public:
    ConditionalToyData(int vocab_size, int seq_len, double peak, double ctx_dropout);

    int seq_len() const override { return seq_len_; }
    int vocab_size() const override { return vocab_size_; }
    bool conditional() const override { return true; }
    void sample(Rng& rng, std::vector<int>& target, std::vector<int>& context) const override;
    const ToyDistribution* oracle() const override { return &marginal_; }

    ToyDistribution conditional_dist(int context_token) const;
    double peak() const { return peak_; }

private:
    int vocab_size_;
    int seq_len_;
    double peak_;
    double ctx_dropout_;
    ToyDistribution marginal_;  // context integrated out
};

// Char-level corpus with random crops: context_len tokens of context, then
// seq_len continuation tokens.
class CorpusData : public DataSource {
public:
    CorpusData(std::string text, int seq_len, int context_len, double ctx_dropout);
    static CorpusData from_file(const std::string& path, int seq_len, int context_len,
                                double ctx_dropout);

    int seq_len() const override { return seq_len_; }
    int vocab_size() const override { return static_cast<int>(charset_.size()); }
    bool conditional() const override { return context_len_ > 0; }
    void sample(Rng& rng, std::vector<int>& target, std::vector<int>& context) const override;

    const std::string& charset() const { return charset_; }
    std::string decode(const std::vector<int>& tokens) const;
    // Empirical bigram transition distribution of the corpus (K*K entries).
    std::vector<double> bigram_stats() const;

private:
    std::string charset_;
    std::vector<int> tokens_;
    int seq_len_;
    int context_len_;
    double ctx_dropout_;
};

// Builds a data source from data.* config keys (kind = toy | ctx-toy | corpus).
std::unique_ptr<DataSource> data_from_config(const Config& cfg);

}  // namespace dfm
