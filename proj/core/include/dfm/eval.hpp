#pragma once

// Metrics and identity-verification reports. Total variation against the
// enumerable truth stands in for large-scale generative perplexity.

#include <string>
#include <vector>

#include "dfm/data.hpp"
#include "dfm/model.hpp"
#include "dfm/oracle.hpp"
#include "dfm/sampler.hpp"
#include "dfm/toy_dist.hpp"

namespace dfm {

// 1/2 sum over all K^L sequences of |empirical - truth|.
double tv_distance(const std::vector<std::vector<int>>& samples, const ToyDistribution& truth);
// TV between two categorical vectors of equal length.
double tv_between(const std::vector<double>& p, const std::vector<double>& q);
// Shannon entropy (nats) of pooled token frequencies.
double unigram_entropy(const std::vector<std::vector<int>>& samples, int vocab_size);
// Empirical within-sequence bigram distribution (K*K entries).
std::vector<double> empirical_bigrams(const std::vector<std::vector<int>>& samples,
                                      int vocab_size);

struct IdentityEntry {
    double max_residual = 0.0;
    double mean_residual = 0.0;
    double tol = 0.0;
    bool pass = false;
};

struct IdentityReport {
    std::string source;  // "oracle" | "model"
    int grid_n = 0;
    int n_probes = 0;
    double t_min = 0.0, t_max = 0.0;
    IdentityEntry diagonal, semigroup, lagrangian, eulerian;

    bool pass() const {
        return diagonal.pass && semigroup.pass && lagrangian.pass && eulerian.pass;
    }
    std::string serialize() const;
    static IdentityReport parse(const std::string& text);
};

struct IdentityTols {
    double diagonal = 1e-3;
    double semigroup = 1e-3;
    double lagrangian = 5e-3;
    double eulerian = 5e-3;
};

struct VerifyOptions {
    int grid_n = 10;
    int n_probes = 50;
    double t_min = 0.05;
    double t_max = 0.95;
    int rk4_steps = 2000;
    double fd_h = 1e-3;
    IdentityTols tols;
    uint64_t seed = 0;
};

// Residuals of the four flow-map identities for the exact oracle denoiser.
IdentityReport verify_identities_oracle(const ToyDistribution& dist, const Schedule& sched,
                                        const NoiseConfig& noise, const VerifyOptions& opt);

// Residuals of a trained model against its own consistency teachers, plus
// the diagonal against the exact posterior.
IdentityReport verify_identities_model(const DenoiserModel& model, const ToyDistribution& dist,
                                       const NoiseConfig& noise, const VerifyOptions& opt);

struct EvalRow {
    int nfe = 0;
    double tv = 0.0;
    double entropy = 0.0;
    int sample_count = 0;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    uint64_t seed = 0;
    std::string checkpoint_id;

    std::string serialize() const;
    static EvalReport parse(const std::string& text);
};

EvalReport evaluate_nfe_sweep(const DenoiserModel& model, const ToyDistribution& truth,
                              const std::vector<int>& nfes, int num_samples,
                              const SamplerConfig& base_cfg, const std::string& checkpoint_id);

struct CfgSweepRow {
    double omega = 0.0;
    double entropy = 0.0;
    double tv = -1.0;  // -1 when no enumerable truth is available
    int sample_count = 0;
};

// Runs block generation per guidance strength over a prompt set.
std::vector<CfgSweepRow> cfg_sweep(const DenoiserModel& model,
                                   const std::vector<std::vector<int>>& prompts,
                                   const std::vector<double>& omegas, const SamplerConfig& cfg,
                                   int num_samples, const ToyDistribution* truth);

}  // namespace dfm
