#pragma once

// Two-stage training: diagonal flow matching, then consistency distillation
// initialized from the diagonal checkpoint (one network shared over (s, t)).
// Training is bit-reproducible for a given seed and config: batches are
// built sequentially and gradients reduce over fixed-size chunks.

#include <array>
#include <iosfwd>
#include <string>
#include <utility>

#include "dfm/checkpoint.hpp"
#include "dfm/data.hpp"
#include "dfm/losses.hpp"
#include "dfm/model.hpp"
#include "dfm/oracle.hpp"

namespace dfm {

struct TrainConfig {
    int batch_size = 64;
    int steps = 20000;
    double lr = 3e-4;
    int warmup_steps = 2500;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    double noise_std = 1.0;
    uint64_t seed = 0;
    int log_every = 1000;
    LossConfig loss;
};

TrainConfig train_from_config(const Config& cfg);
LossConfig loss_from_config(const Config& cfg);
void loss_to_config(const LossConfig& loss, Config& cfg);

// ---- time sampling (full support on the ordered region by construction) ----
double sample_times_diag(Rng& rng);                      // U[0,1]
std::pair<double, double> sample_times_pair(Rng& rng);   // sorted pair of uniforms
std::array<double, 3> sample_times_triple(Rng& rng);     // sorted triple

// ---- optimizer ----
struct AdamState {
    std::vector<double> m, v;
};

// Bias-corrected Adam with linear warmup; step_index counts from 1.
// Returns false and leaves params untouched when the gradient is non-finite.
bool adam_step(std::vector<double>& params, AdamState& state, const std::vector<double>& grad,
               long long step_index, const TrainConfig& cfg);

// ---- training drivers ----
struct TrainStats {
    double loss_ema = 0.0;
    double probe_tv = -1.0;          // -1 when no oracle is available
    double initial_probe_tv = -1.0;  // distillation guard reference
    bool aborted = false;
    std::string abort_reason;
    double elapsed_seconds = 0.0;
    long long steps_run = 0;
};

struct TrainOutcome {
    Checkpoint checkpoint;
    TrainStats stats;
};

// Mean over a fixed (t-grid x probe-state) set of per-position TV between
// the model diagonal and the exact posterior.
double probe_diagonal_tv(const DenoiserModel& model, const ToyDistribution& dist,
                         const NoiseConfig& noise, uint64_t seed, int n_times = 10,
                         int n_states = 16);

TrainOutcome train_diagonal(const Config& run_cfg, const DataSource& data, std::ostream* log);

// init == nullptr runs joint self-distillation from a fresh network
// (exposed, untuned). Surgery defaults: on for PSD, off for ESD/LSD.
TrainOutcome distill(const Config& run_cfg, const Checkpoint* init, LossKind kind,
                     const DataSource& data, std::ostream* log);

}  // namespace dfm
