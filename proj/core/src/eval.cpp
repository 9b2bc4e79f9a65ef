#include "dfm/eval.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dfm/losses.hpp"
#include "dfm/threading.hpp"

namespace dfm {

double tv_between(const std::vector<double>& p, const std::vector<double>& q) {
    if (p.size() != q.size()) throw std::invalid_argument("tv_between: size mismatch");
    double tv = 0.0;
    for (size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
    return 0.5 * tv;
}

double tv_distance(const std::vector<std::vector<int>>& samples, const ToyDistribution& truth) {
    if (samples.empty()) throw std::invalid_argument("tv_distance: empty sample set");
    std::vector<double> counts(truth.num_sequences(), 0.0);
    for (const auto& s : samples) counts[truth.index_of(s)] += 1.0;
    const double inv = 1.0 / static_cast<double>(samples.size());
    double tv = 0.0;
    for (size_t i = 0; i < counts.size(); ++i) tv += std::abs(counts[i] * inv - truth.prob(i));
    return 0.5 * tv;
}

double unigram_entropy(const std::vector<std::vector<int>>& samples, int vocab_size) {
    if (samples.empty()) throw std::invalid_argument("unigram_entropy: empty sample set");
    std::vector<double> counts(static_cast<size_t>(vocab_size), 0.0);
    double total = 0.0;
    for (const auto& s : samples)
        for (int tok : s) {
            counts[static_cast<size_t>(tok)] += 1.0;
            total += 1.0;
        }
    double h = 0.0;
    for (double c : counts) {
        if (c <= 0.0) continue;
        const double p = c / total;
        h -= p * std::log(p);
    }
    return h;
}

std::vector<double> empirical_bigrams(const std::vector<std::vector<int>>& samples,
                                      int vocab_size) {
    std::vector<double> counts(static_cast<size_t>(vocab_size) * vocab_size, 0.0);
    double total = 0.0;
    for (const auto& s : samples)
        for (size_t i = 0; i + 1 < s.size(); ++i) {
            counts[static_cast<size_t>(s[i]) * vocab_size + s[i + 1]] += 1.0;
            total += 1.0;
        }
    if (total > 0.0)
        for (double& c : counts) c /= total;
    return counts;
}

namespace {

struct ResidualAccum {
    double max = 0.0;
    double sum = 0.0;
    long long count = 0;

    void add(double r) {
        if (r > max) max = r;
        sum += r;
        ++count;
    }
    void merge(const ResidualAccum& o) {
        if (o.max > max) max = o.max;
        sum += o.sum;
        count += o.count;
    }
    IdentityEntry entry(double tol) const {
        IdentityEntry e;
        e.max_residual = max;
        e.mean_residual = count > 0 ? sum / count : 0.0;
        e.tol = tol;
        e.pass = e.max_residual <= tol;
        return e;
    }
};

std::vector<double> time_grid(const VerifyOptions& opt) {
    std::vector<double> g(static_cast<size_t>(opt.grid_n));
    for (int i = 0; i < opt.grid_n; ++i)
        g[static_cast<size_t>(i)] =
            opt.t_min + (opt.t_max - opt.t_min) * i / (opt.grid_n - 1);
    return g;
}

Mat probe_state(const ToyDistribution& dist, const Schedule& sched, const NoiseConfig& noise,
                double s, uint64_t seed, int probe) {
    Rng rng(seed, static_cast<uint64_t>(probe) + 1);
    const Mat x0 = sample_noise_matrix(rng, dist.seq_len(), dist.vocab_size(), noise);
    const auto target = dist.sample(rng);
    return make_interpolant(target, x0, sched, s).x;
}

}  // namespace

IdentityReport verify_identities_oracle(const ToyDistribution& dist, const Schedule& sched,
                                        const NoiseConfig& noise, const VerifyOptions& opt) {
    if (sched.per_position())
        throw std::invalid_argument("verify_identities: shared schedules only");
    const auto grid = time_grid(opt);
    const int G = opt.grid_n;
    const double h = opt.fd_h;

    std::vector<ResidualAccum> diag_acc(static_cast<size_t>(opt.n_probes));
    std::vector<ResidualAccum> semi_acc(static_cast<size_t>(opt.n_probes));
    std::vector<ResidualAccum> lagr_acc(static_cast<size_t>(opt.n_probes));
    std::vector<ResidualAccum> eul_acc(static_cast<size_t>(opt.n_probes));

    parallel_for(
        opt.n_probes,
        [&](int probe) {
            const int si = probe % (G - 1);
            const double s = grid[static_cast<size_t>(si)];
            const Mat x = probe_state(dist, sched, noise, s, opt.seed, probe);

            // diagonal: the oracle's psi_{s,s} is the posterior by definition
            const Mat post_s = posterior_denoiser(dist, sched, noise, x, s);
            diag_acc[static_cast<size_t>(probe)].add(max_abs_diff(post_s, post_s));

            std::vector<Mat> X(static_cast<size_t>(G)), Psi(static_cast<size_t>(G));
            for (int j = si + 1; j < G; ++j) {
                auto fm = flow_and_mean(dist, sched, noise, x, s, grid[static_cast<size_t>(j)],
                                        opt.rk4_steps);
                X[static_cast<size_t>(j)] = std::move(fm.x_t);
                Psi[static_cast<size_t>(j)] = std::move(fm.psi);
            }

            const Mat b_s = exact_drift(dist, sched, noise, x, s);
            for (int j = si + 1; j < G; ++j) {
                const double t = grid[static_cast<size_t>(j)];
                const CoefficientSet c = sched.coeffs(s, t);

                // Lagrangian: psi_{s,t} = psi_{t,t}(X_{s,t}) - C dpsi/dt
                const Mat psi_p =
                    flow_and_mean(dist, sched, noise, x, s, t + h, opt.rk4_steps).psi;
                const Mat psi_m =
                    flow_and_mean(dist, sched, noise, x, s, t - h, opt.rk4_steps).psi;
                const Mat dpsi_dt = axby(0.5 / h, psi_p, -0.5 / h, psi_m);
                const Mat psi_tt =
                    posterior_denoiser(dist, sched, noise, X[static_cast<size_t>(j)], t);
                const Mat lag_rhs = axby(1.0, psi_tt, -c.c_lag, dpsi_dt);
                lagr_acc[static_cast<size_t>(probe)].add(
                    max_abs_diff(Psi[static_cast<size_t>(j)], lag_rhs));

                // Eulerian: D_s psi = kappa (psi_{s,t} - psi_{s,s})
                const Mat e_p = flow_and_mean(dist, sched, noise, axby(1.0, x, h, b_s), s + h, t,
                                              opt.rk4_steps)
                                    .psi;
                const Mat e_m = flow_and_mean(dist, sched, noise, axby(1.0, x, -h, b_s), s - h, t,
                                              opt.rk4_steps)
                                    .psi;
                const Mat lhs = axby(0.5 / h, e_p, -0.5 / h, e_m);
                const Mat rhs =
                    axby(c.kappa, Psi[static_cast<size_t>(j)], -c.kappa, post_s);
                eul_acc[static_cast<size_t>(probe)].add(max_abs_diff(lhs, rhs));

                // semigroup through every intermediate grid time
                for (int m = si + 1; m < j; ++m) {
                    const double u = grid[static_cast<size_t>(m)];
                    const Mat psi_ut = flow_and_mean(dist, sched, noise,
                                                     X[static_cast<size_t>(m)], u, t,
                                                     opt.rk4_steps)
                                           .psi;
                    const double omega = sched.semigroup_weight(s, u, t);
                    const Mat comp = axby(omega, Psi[static_cast<size_t>(m)], 1.0 - omega, psi_ut);
                    semi_acc[static_cast<size_t>(probe)].add(
                        max_abs_diff(Psi[static_cast<size_t>(j)], comp));
                }
            }
        },
        1);

    ResidualAccum diag, semi, lagr, eul;
    for (int i = 0; i < opt.n_probes; ++i) {
        diag.merge(diag_acc[static_cast<size_t>(i)]);
        semi.merge(semi_acc[static_cast<size_t>(i)]);
        lagr.merge(lagr_acc[static_cast<size_t>(i)]);
        eul.merge(eul_acc[static_cast<size_t>(i)]);
    }

    IdentityReport rep;
    rep.source = "oracle";
    rep.grid_n = opt.grid_n;
    rep.n_probes = opt.n_probes;
    rep.t_min = opt.t_min;
    rep.t_max = opt.t_max;
    rep.diagonal = diag.entry(opt.tols.diagonal);
    rep.semigroup = semi.entry(opt.tols.semigroup);
    rep.lagrangian = lagr.entry(opt.tols.lagrangian);
    rep.eulerian = eul.entry(opt.tols.eulerian);
    return rep;
}

IdentityReport verify_identities_model(const DenoiserModel& model, const ToyDistribution& dist,
                                       const NoiseConfig& noise, const VerifyOptions& opt) {
    const Schedule& sched = model.schedule();
    const auto grid = time_grid(opt);
    const int G = opt.grid_n;

    std::vector<ResidualAccum> diag_acc(static_cast<size_t>(opt.n_probes));
    std::vector<ResidualAccum> semi_acc(static_cast<size_t>(opt.n_probes));
    std::vector<ResidualAccum> lagr_acc(static_cast<size_t>(opt.n_probes));
    std::vector<ResidualAccum> eul_acc(static_cast<size_t>(opt.n_probes));

    parallel_for(
        opt.n_probes,
        [&](int probe) {
            const int si = probe % (G - 1);
            const double s = grid[static_cast<size_t>(si)];
            const Mat x = probe_state(dist, sched, noise, s, opt.seed, probe);
            ModelSource src(model);

            const Mat post_s = posterior_denoiser(dist, sched, noise, x, s);
            diag_acc[static_cast<size_t>(probe)].add(max_abs_diff(src.psi(x, s, s), post_s));

            const Mat drift = source_drift(src, x, s);
            for (int j = si + 1; j < G; ++j) {
                const double t = grid[static_cast<size_t>(j)];
                const Mat psi_st = src.psi(x, s, t);
                auto teacher_residual = [&](auto&& make) {
                    try {
                        return max_abs_diff(psi_st, make().probs);
                    } catch (const TeacherInvalidError&) {
                        return 1.0;  // an unusable teacher is a failed identity
                    }
                };
                lagr_acc[static_cast<size_t>(probe)].add(
                    teacher_residual([&] { return lsd_teacher(src, x, s, t); }));
                eul_acc[static_cast<size_t>(probe)].add(
                    teacher_residual([&] { return esd_teacher(src, x, s, t, drift); }));
                for (int m = si + 1; m < j; ++m)
                    semi_acc[static_cast<size_t>(probe)].add(teacher_residual(
                        [&] { return psd_teacher(src, x, s, grid[static_cast<size_t>(m)], t); }));
            }
        },
        1);

    ResidualAccum diag, semi, lagr, eul;
    for (int i = 0; i < opt.n_probes; ++i) {
        diag.merge(diag_acc[static_cast<size_t>(i)]);
        semi.merge(semi_acc[static_cast<size_t>(i)]);
        lagr.merge(lagr_acc[static_cast<size_t>(i)]);
        eul.merge(eul_acc[static_cast<size_t>(i)]);
    }

    IdentityReport rep;
    rep.source = "model";
    rep.grid_n = opt.grid_n;
    rep.n_probes = opt.n_probes;
    rep.t_min = opt.t_min;
    rep.t_max = opt.t_max;
    rep.diagonal = diag.entry(opt.tols.diagonal);
    rep.semigroup = semi.entry(opt.tols.semigroup);
    rep.lagrangian = lagr.entry(opt.tols.lagrangian);
    rep.eulerian = eul.entry(opt.tols.eulerian);
    return rep;
}

namespace {

void write_entry(std::ostringstream& os, const char* name, const IdentityEntry& e) {
    os << name << ".max = " << format_double_exact(e.max_residual) << '\n'
       << name << ".mean = " << format_double_exact(e.mean_residual) << '\n'
       << name << ".tol = " << format_double_exact(e.tol) << '\n'
       << name << ".pass = " << (e.pass ? "true" : "false") << '\n';
}

IdentityEntry read_entry(const Config& cfg, const std::string& name) {
    IdentityEntry e;
    e.max_residual = cfg.get_double(name + ".max");
    e.mean_residual = cfg.get_double(name + ".mean");
    e.tol = cfg.get_double(name + ".tol");
    e.pass = cfg.get_bool_or(name + ".pass", false);
    return e;
}

}  // namespace

std::string IdentityReport::serialize() const {
    std::ostringstream os;
    os << "report = identity\n";
    os << "source = " << source << '\n';
    os << "grid_n = " << grid_n << '\n';
    os << "n_probes = " << n_probes << '\n';
    os << "t_min = " << format_double_exact(t_min) << '\n';
    os << "t_max = " << format_double_exact(t_max) << '\n';
    write_entry(os, "diagonal", diagonal);
    write_entry(os, "semigroup", semigroup);
    write_entry(os, "lagrangian", lagrangian);
    write_entry(os, "eulerian", eulerian);
    return os.str();
}

IdentityReport IdentityReport::parse(const std::string& text) {
    const Config cfg = Config::parse_text(text);
    IdentityReport rep;
    rep.source = cfg.get("source");
    rep.grid_n = static_cast<int>(cfg.get_int("grid_n"));
    rep.n_probes = static_cast<int>(cfg.get_int("n_probes"));
    rep.t_min = cfg.get_double("t_min");
    rep.t_max = cfg.get_double("t_max");
    rep.diagonal = read_entry(cfg, "diagonal");
    rep.semigroup = read_entry(cfg, "semigroup");
    rep.lagrangian = read_entry(cfg, "lagrangian");
    rep.eulerian = read_entry(cfg, "eulerian");
    return rep;
}

std::string EvalReport::serialize() const {
    std::ostringstream os;
    os << "report = eval\n";
    os << "seed = " << seed << '\n';
    os << "checkpoint = " << checkpoint_id << '\n';
    os << "rows = " << rows.size() << '\n';
    for (size_t i = 0; i < rows.size(); ++i) {
        os << "row." << i << " = " << rows[i].nfe << ',' << format_double_exact(rows[i].tv) << ','
           << format_double_exact(rows[i].entropy) << ',' << rows[i].sample_count << '\n';
    }
    return os.str();
}

EvalReport EvalReport::parse(const std::string& text) {
    const Config cfg = Config::parse_text(text);
    EvalReport rep;
    rep.seed = static_cast<uint64_t>(cfg.get_int("seed"));
    rep.checkpoint_id = cfg.get("checkpoint");
    const int n = static_cast<int>(cfg.get_int("rows"));
    for (int i = 0; i < n; ++i) {
        const auto fields = cfg.get("row." + std::to_string(i));
        std::istringstream is(fields);
        std::string item;
        EvalRow row;
        std::getline(is, item, ',');
        row.nfe = std::atoi(item.c_str());
        std::getline(is, item, ',');
        row.tv = std::strtod(item.c_str(), nullptr);
        std::getline(is, item, ',');
        row.entropy = std::strtod(item.c_str(), nullptr);
        std::getline(is, item, ',');
        row.sample_count = std::atoi(item.c_str());
        rep.rows.push_back(row);
    }
    return rep;
}

EvalReport evaluate_nfe_sweep(const DenoiserModel& model, const ToyDistribution& truth,
                              const std::vector<int>& nfes, int num_samples,
                              const SamplerConfig& base_cfg, const std::string& checkpoint_id) {
    EvalReport rep;
    rep.seed = base_cfg.seed;
    rep.checkpoint_id = checkpoint_id;
    for (int nfe : nfes) {
        SamplerConfig cfg = base_cfg;
        cfg.nfe = nfe;
        const auto samples =
            generate_many(model.schedule(), model_psi(model), model.arch().seq_len,
                          model.arch().vocab_size, cfg, num_samples);
        EvalRow row;
        row.nfe = nfe;
        row.tv = tv_distance(samples, truth);
        row.entropy = unigram_entropy(samples, model.arch().vocab_size);
        row.sample_count = num_samples;
        rep.rows.push_back(row);
    }
    return rep;
}

std::vector<CfgSweepRow> cfg_sweep(const DenoiserModel& model,
                                   const std::vector<std::vector<int>>& prompts,
                                   const std::vector<double>& omegas, const SamplerConfig& cfg,
                                   int num_samples, const ToyDistribution* truth) {
    if (prompts.empty()) throw std::invalid_argument("cfg_sweep: need at least one prompt");
    std::vector<CfgSweepRow> rows;
    for (double omega : omegas) {
        std::vector<std::vector<int>> samples(static_cast<size_t>(num_samples));
        parallel_for(num_samples, [&](int i) {
            Rng rng(cfg.seed, static_cast<uint64_t>(i));
            SamplerConfig scfg = cfg;
            scfg.guidance_omega = omega;
            const auto& prompt = prompts[static_cast<size_t>(i) % prompts.size()];
            samples[static_cast<size_t>(i)] =
                block_generate(model, prompt, scfg, rng).tokens;
        });
        CfgSweepRow row;
        row.omega = omega;
        row.entropy = unigram_entropy(samples, model.arch().vocab_size);
        row.sample_count = num_samples;
        if (truth && cfg.n_blocks == 1) row.tv = tv_distance(samples, *truth);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace dfm
