#pragma once

// Few-step and many-step generation through the learned flow map, with
// classifier-free guidance and block generation against a growing context.

#include <functional>
#include <vector>

#include "dfm/denoiser_source.hpp"
#include "dfm/model.hpp"
#include "dfm/oracle.hpp"
#include "dfm/rng.hpp"

namespace dfm {

enum class TimeGrid { UniformBeta, UniformT };

struct SamplerConfig {
    int nfe = 1;
    double guidance_omega = 0.0;  // 0 = unconditional, 1 = plain conditional
    int block_len = 0;            // 0: use the model sequence length
    int n_blocks = 1;
    uint64_t seed = 0;
    TimeGrid time_grid = TimeGrid::UniformBeta;
    double noise_std = 1.0;
};

// Mean-denoiser provider for one sampling run. Guided providers may return
// points outside the simplex for omega > 1; the flow-map coefficients, not
// psi, guarantee terminal validity.
using PsiFn = std::function<Mat(const Mat& x, double s, double t)>;

Mat sample_noise(Rng& rng, int seq_len, int vocab_size, const NoiseConfig& noise);

// Guided denoiser psi_uncond + omega (psi_cond - psi_uncond); never clamped.
Mat cfg_combine(const Mat& psi_cond, const Mat& psi_uncond, double omega);
// The same extrapolation expressed at drift level:
// b = ell_s x + lambda_s psi_guided.
Mat cfg_combine_drift(const Mat& psi_cond, const Mat& psi_uncond, double omega,
                      const Schedule& sched, const Mat& x, double s);

// One flow-map jump X_{s,t}(x) = Gamma x + Xi psi(x, s, t); t = 1 uses the
// exact endpoint coefficients (Gamma = 0, Xi = 1) so 1-NFE sampling is exact.
Mat flow_map_step(const Schedule& sched, const PsiFn& psi, const Mat& x, double s, double t);
Mat flow_map_step(const DenoiserSource& src, const Mat& x, double s, double t);

PsiFn model_psi(const DenoiserModel& model, const std::vector<int>* context = nullptr);
// CFG provider: conditional and unconditional passes of the same model.
PsiFn guided_psi(const DenoiserModel& model, const std::vector<int>& context, double omega);
// Oracle provider; t = 1 queries are clamped to the oracle terminal time.
PsiFn oracle_psi(const OracleDenoiser& oracle);

std::vector<double> sampling_times(const Schedule& sched, int nfe, TimeGrid grid);

// Runs the nfe-step sampler from fresh noise; returns argmax tokens.
// final_psi, when non-null, receives the last mean-denoiser output.
std::vector<int> generate(const Schedule& sched, const PsiFn& psi, int seq_len, int vocab_size,
                          const SamplerConfig& cfg, Rng& rng, Mat* final_state = nullptr,
                          Mat* final_psi = nullptr);

// Independent samples with per-sample RNG streams (seed, sample index).
std::vector<std::vector<int>> generate_many(const Schedule& sched, const PsiFn& psi, int seq_len,
                                            int vocab_size, const SamplerConfig& cfg,
                                            int num_samples);

// Block generation: n_blocks blocks of block_len tokens, each conditioned on
// the accumulated context (prompt + previously generated blocks).
TokenSeq block_generate(const DenoiserModel& model, const std::vector<int>& prompt,
                        const SamplerConfig& cfg, Rng& rng);

}  // namespace dfm
