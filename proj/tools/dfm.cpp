// Command-line surface: train, distill, sample, verify, eval, cfg-sweep.
// Exit codes: 0 success / verification pass, 1 verification failure,
// 2 usage error.

#include <CLI11.hpp>

#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "dfm/checkpoint.hpp"
#include "dfm/config.hpp"
#include "dfm/data.hpp"
#include "dfm/eval.hpp"
#include "dfm/sampler.hpp"
#include "dfm/trainer.hpp"

namespace {

using namespace dfm;

std::vector<int> parse_nfe_list(const std::string& csv) {
    auto v = parse_int_list(csv);
    if (v.empty()) throw std::runtime_error("empty nfe list");
    return v;
}

LossKind parse_loss_kind(const std::string& s) {
    if (s == "psd") return LossKind::Psd;
    if (s == "lsd") return LossKind::Lsd;
    if (s == "esd") return LossKind::Esd;
    throw std::runtime_error("loss must be psd, lsd or esd");
}

SamplerConfig sampler_from_config(const Config& cfg) {
    SamplerConfig sc;
    sc.nfe = static_cast<int>(cfg.get_int_or("sampler.nfe", 1));
    sc.guidance_omega = cfg.get_double_or("sampler.guidance_omega", 0.0);
    sc.block_len = static_cast<int>(cfg.get_int_or("sampler.block_len", 0));
    sc.n_blocks = static_cast<int>(cfg.get_int_or("sampler.n_blocks", 1));
    sc.seed = static_cast<uint64_t>(cfg.get_int_or("sampler.seed", 0));
    sc.time_grid = cfg.get_or("sampler.time_grid", "uniform-beta") == "uniform-t"
                       ? TimeGrid::UniformT
                       : TimeGrid::UniformBeta;
    sc.noise_std = cfg.get_double_or("train.noise_std", 1.0);
    return sc;
}

std::vector<int> parse_prompt(const std::string& text) {
    std::vector<int> toks;
    std::istringstream is(text);
    int v;
    while (is >> v) toks.push_back(v);
    return toks;
}

int cmd_train(const std::string& config_path, const std::string& out_path) {
    const Config cfg = Config::load(config_path);
    const auto data = data_from_config(cfg);
    const TrainOutcome outcome = train_diagonal(cfg, *data, &std::cout);
    if (outcome.stats.aborted) {
        std::cerr << "training aborted: " << outcome.stats.abort_reason << '\n';
        return 1;
    }
    outcome.checkpoint.save(out_path);
    std::cout << "saved " << out_path << " (probe_tv " << outcome.stats.probe_tv << ", "
              << outcome.stats.elapsed_seconds << " s)\n";
    return 0;
}

int cmd_distill(const std::string& config_path, const std::string& init_path,
                const std::string& loss, const std::string& out_path) {
    const Config cfg = Config::load(config_path);
    const auto data = data_from_config(cfg);
    Checkpoint init;
    const Checkpoint* init_ptr = nullptr;
    if (!init_path.empty()) {
        init = Checkpoint::load(init_path);
        init_ptr = &init;
    }
    const TrainOutcome outcome = distill(cfg, init_ptr, parse_loss_kind(loss), *data, &std::cout);
    if (outcome.stats.aborted) {
        std::cerr << "distillation aborted: " << outcome.stats.abort_reason << '\n';
        return 1;
    }
    outcome.checkpoint.save(out_path);
    std::cout << "saved " << out_path << '\n';
    return 0;
}

int cmd_sample(const std::string& ckpt_path, int nfe, int num_samples, uint64_t seed,
               double guidance, const std::string& prompt_text, bool emit_probs) {
    const Checkpoint ck = Checkpoint::load(ckpt_path);
    const DenoiserModel model = ck.restore_model();
    SamplerConfig cfg = sampler_from_config(ck.config);
    cfg.nfe = nfe;
    cfg.seed = seed;
    cfg.guidance_omega = guidance;

    const std::vector<int> prompt = parse_prompt(prompt_text);
    const std::string charset = ck.config.get_or("data.charset", "");

    for (int i = 0; i < num_samples; ++i) {
        Rng rng(seed, static_cast<uint64_t>(i));
        std::vector<int> tokens;
        Mat final_psi;
        if (!prompt.empty() || cfg.n_blocks > 1) {
            tokens = block_generate(model, prompt, cfg, rng).tokens;
        } else {
            tokens = generate(model.schedule(), model_psi(model), model.arch().seq_len,
                              model.arch().vocab_size, cfg, rng, nullptr,
                              emit_probs ? &final_psi : nullptr);
        }
        if (!charset.empty()) {
            std::string line;
            for (int tok : tokens) line.push_back(charset[static_cast<size_t>(tok)]);
            std::cout << line << '\n';
        } else {
            for (size_t j = 0; j < tokens.size(); ++j)
                std::cout << (j ? " " : "") << tokens[j];
            std::cout << '\n';
        }
        if (emit_probs && final_psi.rows() > 0) {
            for (int l = 0; l < final_psi.rows(); ++l) {
                std::cout << "# psi";
                for (int k = 0; k < final_psi.cols(); ++k)
                    std::cout << ' ' << format_double_exact(final_psi(l, k));
                std::cout << '\n';
            }
        }
    }
    return 0;
}

int cmd_verify(const std::string& mode, const std::string& ckpt_path, const std::string& dist_path,
               int grid, int probes, double tol, uint64_t seed, const std::string& sched_kind) {
    const ToyDistribution dist = ToyDistribution::load(dist_path);
    NoiseConfig noise;
    VerifyOptions opt;
    opt.grid_n = grid;
    opt.n_probes = probes;
    opt.seed = seed;
    opt.tols = IdentityTols{tol, tol, tol, tol};

    IdentityReport rep;
    if (mode == "oracle") {
        Schedule sched = Schedule::make_linear();
        if (sched_kind == "blended-argmax") {
            Rng rng(seed + 1);
            sched = Schedule::make_blended_argmax(0.9, dist.vocab_size(), 1.0, 50000, 256, rng);
        }
        rep = verify_identities_oracle(dist, sched, noise, opt);
    } else if (mode == "model") {
        const Checkpoint ck = Checkpoint::load(ckpt_path);
        const DenoiserModel model = ck.restore_model();
        noise.std = ck.config.get_double_or("train.noise_std", 1.0);
        rep = verify_identities_model(model, dist, noise, opt);
    } else {
        std::cerr << "verify: mode must be oracle or model\n";
        return 2;
    }
    std::cout << rep.serialize();
    return rep.pass() ? 0 : 1;
}

int cmd_eval(const std::string& ckpt_path, const std::string& nfe_csv, int num_samples,
             uint64_t seed, const std::string& dist_path) {
    const Checkpoint ck = Checkpoint::load(ckpt_path);
    const DenoiserModel model = ck.restore_model();
    std::string path = dist_path;
    if (path.empty()) path = ck.config.get_or("data.path", "");
    if (path.empty()) {
        std::cerr << "eval: needs an enumerable truth distribution (--dist)\n";
        return 2;
    }
    const ToyDistribution truth = ToyDistribution::load(path);
    SamplerConfig cfg = sampler_from_config(ck.config);
    cfg.seed = seed;
    const EvalReport rep =
        evaluate_nfe_sweep(model, truth, parse_nfe_list(nfe_csv), num_samples, cfg,
                           ck.content_id());
    std::cout << rep.serialize();
    return 0;
}

int cmd_cfg_sweep(const std::string& ckpt_path, const std::string& omegas_csv, int num_samples,
                  uint64_t seed, const std::string& prompt_text) {
    const Checkpoint ck = Checkpoint::load(ckpt_path);
    const DenoiserModel model = ck.restore_model();
    if (!model.arch().conditional) {
        std::cerr << "cfg-sweep: checkpoint is not conditional\n";
        return 2;
    }
    SamplerConfig cfg = sampler_from_config(ck.config);
    cfg.seed = seed;
    std::vector<std::vector<int>> prompts;
    if (!prompt_text.empty()) {
        prompts.push_back(parse_prompt(prompt_text));
    } else {
        for (int k = 0; k < model.arch().vocab_size; ++k) prompts.push_back({k});
    }
    const auto rows =
        cfg_sweep(model, prompts, parse_double_list(omegas_csv), cfg, num_samples, nullptr);
    std::cout << "omega entropy samples\n";
    for (const auto& row : rows)
        std::cout << row.omega << ' ' << row.entropy << ' ' << row.sample_count << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Discrete flow maps: simplex-constrained flow-map generation for token sequences"};
    app.require_subcommand(1);

    std::string config_path, out_path, init_path, ckpt_path, dist_path;
    std::string loss = "psd", mode = "oracle", nfe_csv = "1,2,4,8";
    std::string omegas_csv = "0,0.5,1,1.5,2", prompt_text, sched_kind = "linear";
    int nfe = 1, num_samples = 16, grid = 10, probes = 50;
    double tol = 5e-3, guidance = 0.0;
    uint64_t seed = 0;
    bool emit_probs = false;

    auto* train = app.add_subcommand("train", "diagonal flow-matching stage");
    train->add_option("--config", config_path)->required();
    train->add_option("--out", out_path)->required();

    auto* dist_cmd = app.add_subcommand("distill", "consistency distillation stage");
    dist_cmd->add_option("--config", config_path)->required();
    dist_cmd->add_option("--init", init_path);
    dist_cmd->add_option("--loss", loss)->check(CLI::IsMember({"psd", "lsd", "esd"}));
    dist_cmd->add_option("--out", out_path)->required();

    auto* sample = app.add_subcommand("sample", "generate token sequences");
    sample->add_option("--ckpt", ckpt_path)->required();
    sample->add_option("--nfe", nfe);
    sample->add_option("--num-samples", num_samples);
    sample->add_option("--seed", seed);
    sample->add_option("--guidance", guidance);
    sample->add_option("--prompt", prompt_text);
    sample->add_flag("--emit-probs", emit_probs);

    auto* verify = app.add_subcommand("verify", "identity verification report");
    verify->add_option("--mode", mode)->check(CLI::IsMember({"oracle", "model"}));
    verify->add_option("--ckpt", ckpt_path);
    verify->add_option("--dist", dist_path)->required();
    verify->add_option("--grid", grid);
    verify->add_option("--probes", probes);
    verify->add_option("--tol", tol);
    verify->add_option("--seed", seed);
    verify->add_option("--schedule", sched_kind)
        ->check(CLI::IsMember({"linear", "blended-argmax"}));

    auto* eval_cmd = app.add_subcommand("eval", "TV / entropy across NFE");
    eval_cmd->add_option("--ckpt", ckpt_path)->required();
    eval_cmd->add_option("--nfe", nfe_csv);
    eval_cmd->add_option("--num-samples", num_samples);
    eval_cmd->add_option("--seed", seed);
    eval_cmd->add_option("--dist", dist_path);

    auto* sweep = app.add_subcommand("cfg-sweep", "guidance-strength sweep");
    sweep->add_option("--ckpt", ckpt_path)->required();
    sweep->add_option("--omegas", omegas_csv);
    sweep->add_option("--num-samples", num_samples);
    sweep->add_option("--seed", seed);
    sweep->add_option("--prompt", prompt_text);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) return cmd_train(config_path, out_path);
        if (dist_cmd->parsed()) return cmd_distill(config_path, init_path, loss, out_path);
        if (sample->parsed())
            return cmd_sample(ckpt_path, nfe, num_samples, seed, guidance, prompt_text,
                              emit_probs);
        if (verify->parsed())
            return cmd_verify(mode, ckpt_path, dist_path, grid, probes, tol, seed, sched_kind);
        if (eval_cmd->parsed()) return cmd_eval(ckpt_path, nfe_csv, num_samples, seed, dist_path);
        if (sweep->parsed())
            return cmd_cfg_sweep(ckpt_path, omegas_csv, num_samples, seed, prompt_text);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
