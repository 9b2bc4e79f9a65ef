#include "dfm/data.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dfm {

namespace {

std::vector<std::vector<double>> peaked_marginals(int K, int L, int c, double peak) {
    std::vector<std::vector<double>> m(static_cast<size_t>(L));
    for (auto& row : m) {
        row.assign(static_cast<size_t>(K), (1.0 - peak) / (K - 1));
        row[static_cast<size_t>(c)] = peak;
    }
    return m;
}

}  // namespace

ConditionalToyData::ConditionalToyData(int vocab_size, int seq_len, double peak,
                                       double ctx_dropout)
    : vocab_size_(vocab_size),
      seq_len_(seq_len),
      peak_(peak),
      ctx_dropout_(ctx_dropout),
      marginal_(ToyDistribution(1, 2, {0.5, 0.5})) {
    if (!(peak > 0.0 && peak < 1.0)) throw std::invalid_argument("ConditionalToyData: bad peak");
    if (!(ctx_dropout >= 0.0 && ctx_dropout <= 1.0))
        throw std::invalid_argument("ConditionalToyData: bad dropout");
    // Unconditional marginal: uniform mixture over contexts.
    std::vector<double> joint;
    for (int c = 0; c < vocab_size_; ++c) {
        const ToyDistribution d = conditional_dist(c);
        if (joint.empty()) joint.assign(d.joint().size(), 0.0);
        for (size_t i = 0; i < joint.size(); ++i) joint[i] += d.joint()[i] / vocab_size_;
    }
    marginal_ = ToyDistribution(seq_len_, vocab_size_, std::move(joint));
}

ToyDistribution ConditionalToyData::conditional_dist(int context_token) const {
    return ToyDistribution::product(
        peaked_marginals(vocab_size_, seq_len_, context_token, peak_));
}

void ConditionalToyData::sample(Rng& rng, std::vector<int>& target,
                                std::vector<int>& context) const {
    const int c = rng.uniform_int(vocab_size_);
    target.resize(static_cast<size_t>(seq_len_));
    for (int l = 0; l < seq_len_; ++l) {
        if (rng.uniform() < peak_) {
            target[static_cast<size_t>(l)] = c;
        } else {
            int tok = rng.uniform_int(vocab_size_ - 1);
            if (tok >= c) ++tok;
            target[static_cast<size_t>(l)] = tok;
        }
    }
    context.clear();
    if (rng.uniform() >= ctx_dropout_) context.push_back(c);
}

CorpusData::CorpusData(std::string text, int seq_len, int context_len, double ctx_dropout)
    : seq_len_(seq_len), context_len_(context_len), ctx_dropout_(ctx_dropout) {
    if (text.empty()) throw std::invalid_argument("CorpusData: empty corpus");
    std::set<char> chars(text.begin(), text.end());
    charset_.assign(chars.begin(), chars.end());
    if (charset_.size() < 2) throw std::invalid_argument("CorpusData: need at least 2 symbols");
    tokens_.reserve(text.size());
    for (char ch : text)
        tokens_.push_back(static_cast<int>(charset_.find(ch)));
    if (static_cast<int>(tokens_.size()) < context_len_ + seq_len_)
        throw std::invalid_argument("CorpusData: corpus shorter than one crop");
}

CorpusData CorpusData::from_file(const std::string& path, int seq_len, int context_len,
                                 double ctx_dropout) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("CorpusData: cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return CorpusData(ss.str(), seq_len, context_len, ctx_dropout);
}

void CorpusData::sample(Rng& rng, std::vector<int>& target, std::vector<int>& context) const {
    const int max_start = static_cast<int>(tokens_.size()) - seq_len_ - context_len_;
    const int start = context_len_ + (max_start > 0 ? rng.uniform_int(max_start + 1) : 0);
    context.clear();
    if (context_len_ > 0 && rng.uniform() >= ctx_dropout_)
        context.assign(tokens_.begin() + (start - context_len_), tokens_.begin() + start);
    target.assign(tokens_.begin() + start, tokens_.begin() + start + seq_len_);
}

std::string CorpusData::decode(const std::vector<int>& tokens) const {
    std::string out;
    out.reserve(tokens.size());
    for (int tok : tokens) out.push_back(charset_[static_cast<size_t>(tok)]);
    return out;
}

std::vector<double> CorpusData::bigram_stats() const {
    const int K = vocab_size();
    std::vector<double> counts(static_cast<size_t>(K) * K, 0.0);
    for (size_t i = 0; i + 1 < tokens_.size(); ++i)
        counts[static_cast<size_t>(tokens_[i]) * K + tokens_[i + 1]] += 1.0;
    double total = 0.0;
    for (double c : counts) total += c;
    for (double& c : counts) c /= total;
    return counts;
}

std::unique_ptr<DataSource> data_from_config(const Config& cfg) {
    const std::string kind = cfg.get_or("data.kind", "toy");
    if (kind == "toy") {
        return std::make_unique<ToyData>(ToyDistribution::load(cfg.get("data.path")));
    }
    if (kind == "ctx-toy") {
        return std::make_unique<ConditionalToyData>(
            static_cast<int>(cfg.get_int("model.vocab_size")),
            static_cast<int>(cfg.get_int("model.seq_len")),
            cfg.get_double_or("data.peak", 0.7), cfg.get_double_or("data.ctx_dropout", 0.2));
    }
    if (kind == "corpus") {
        return std::make_unique<CorpusData>(CorpusData::from_file(
            cfg.get("data.path"), static_cast<int>(cfg.get_int("model.seq_len")),
            static_cast<int>(cfg.get_int_or("data.context_len", 0)),
            cfg.get_double_or("data.ctx_dropout", 0.2)));
    }
    throw std::runtime_error("data: unknown kind " + kind);
}

}  // namespace dfm
