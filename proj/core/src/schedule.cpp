#include "dfm/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace dfm {

namespace {

void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::domain_error("Schedule: t outside [0, 1]");
}

// Piecewise-linear interpolation on a monotone node grid. Returns the node
// value exactly when t hits a node.
double interp(const std::vector<double>& xs, const std::vector<double>& ys, double x) {
    const auto it = std::upper_bound(xs.begin(), xs.end(), x);
    size_t hi = static_cast<size_t>(it - xs.begin());
    if (hi == 0) return ys.front();
    if (hi >= xs.size()) {
        if (x == xs.back()) return ys.back();
        return ys.back();
    }
    const size_t lo = hi - 1;
    if (x == xs[lo]) return ys[lo];
    const double slope = (ys[hi] - ys[lo]) / (xs[hi] - xs[lo]);
    return ys[lo] + (x - xs[lo]) * slope;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::vector<double> isotonic_fit(const std::vector<double>& y) {
    // Pool adjacent violators with unit weights.
    std::vector<double> level;
    std::vector<int> count;
    level.reserve(y.size());
    count.reserve(y.size());
    for (double v : y) {
        level.push_back(v);
        count.push_back(1);
        while (level.size() > 1 && level[level.size() - 2] > level.back()) {
            const double merged =
                (level[level.size() - 2] * count[count.size() - 2] + level.back() * count.back()) /
                (count[count.size() - 2] + count.back());
            count[count.size() - 2] += count.back();
            level[level.size() - 2] = merged;
            level.pop_back();
            count.pop_back();
        }
    }
    std::vector<double> out;
    out.reserve(y.size());
    for (size_t b = 0; b < level.size(); ++b)
        out.insert(out.end(), static_cast<size_t>(count[b]), level[b]);
    return out;
}

Schedule Schedule::make_linear() {
    Schedule s;
    s.kind_ = ScheduleKind::Linear;
    return s;
}

Schedule Schedule::make_tabulated(std::vector<double> t_nodes, std::vector<double> beta_nodes) {
    if (t_nodes.size() != beta_nodes.size() || t_nodes.size() < 2)
        throw std::invalid_argument("Schedule: bad table");
    if (t_nodes.front() != 0.0 || t_nodes.back() != 1.0 || beta_nodes.front() != 0.0 ||
        beta_nodes.back() != 1.0)
        throw std::invalid_argument("Schedule: table endpoints must be (0,0) and (1,1)");
    for (size_t i = 1; i < t_nodes.size(); ++i) {
        if (!(t_nodes[i] > t_nodes[i - 1]))
            throw std::invalid_argument("Schedule: t nodes must be strictly increasing");
        if (beta_nodes[i] < beta_nodes[i - 1])
            throw std::invalid_argument("Schedule: beta table must be non-decreasing");
    }
    Schedule s;
    s.kind_ = ScheduleKind::Tabulated;
    s.t_nodes_ = std::move(t_nodes);
    s.beta_nodes_ = std::move(beta_nodes);
    // Monotone C1 cubic interpolation (Fritsch-Carlson slopes). beta_dot is
    // then the true, continuous derivative of beta, which keeps the drift
    // scalars consistent with the flow coefficients: the mean-denoiser weight
    // mass is exactly 1 up to quadrature error. A strictly linear table
    // (lambda_blend = 0) reproduces beta(t) = t exactly.
    const size_t n = s.t_nodes_.size();
    s.node_slope_.resize(n);
    std::vector<double> m(n - 1);
    for (size_t i = 0; i + 1 < n; ++i)
        m[i] = (s.beta_nodes_[i + 1] - s.beta_nodes_[i]) / (s.t_nodes_[i + 1] - s.t_nodes_[i]);
    s.node_slope_[0] = m.front();
    s.node_slope_[n - 1] = m.back();
    for (size_t i = 1; i + 1 < n; ++i) {
        if (m[i - 1] == m[i]) {
            s.node_slope_[i] = m[i];
        } else if (m[i - 1] <= 0.0 || m[i] <= 0.0) {
            s.node_slope_[i] = 0.0;
        } else {
            const double h0 = s.t_nodes_[i] - s.t_nodes_[i - 1];
            const double h1 = s.t_nodes_[i + 1] - s.t_nodes_[i];
            const double w1 = 2.0 * h1 + h0;
            const double w2 = h1 + 2.0 * h0;
            s.node_slope_[i] = (w1 + w2) / (w1 / m[i - 1] + w2 / m[i]);
        }
    }
    return s;
}

Schedule Schedule::make_blended_argmax(double lambda_blend, int vocab_size, double noise_std,
                                       int mc_samples, int grid_size, Rng& rng) {
    if (!(lambda_blend >= 0.0 && lambda_blend <= 1.0))
        throw std::invalid_argument("blended_argmax: lambda outside [0, 1]");
    if (vocab_size < 2) throw std::invalid_argument("blended_argmax: need K >= 2");
    if (mc_samples < 1000) throw std::invalid_argument("blended_argmax: need mc_samples >= 1000");
    if (grid_size < 8) throw std::invalid_argument("blended_argmax: grid too coarse");

    // For one draw (I0, k), the event argmax((1-tau) I0 + tau e_k) = k holds
    // exactly on an interval [tau*, 1]: each pairwise margin
    // (1-tau)(I0_k - I0_j) + tau is linear in tau and positive at tau = 1.
    // The match probability is therefore the CDF of the thresholds tau*.
    std::vector<double> thresholds(static_cast<size_t>(mc_samples));
    std::vector<double> noise(static_cast<size_t>(vocab_size));
    for (int i = 0; i < mc_samples; ++i) {
        for (auto& v : noise) v = rng.normal(0.0, noise_std);
        const int k = rng.uniform_int(vocab_size);
        double tau_star = 0.0;
        for (int j = 0; j < vocab_size; ++j) {
            if (j == k) continue;
            const double c = noise[static_cast<size_t>(k)] - noise[static_cast<size_t>(j)];
            if (c < 0.0) tau_star = std::max(tau_star, -c / (1.0 - c));
        }
        thresholds[static_cast<size_t>(i)] = tau_star;
    }
    std::sort(thresholds.begin(), thresholds.end());

    const int g = grid_size;
    std::vector<double> tau(static_cast<size_t>(g)), match(static_cast<size_t>(g));
    for (int m = 0; m < g; ++m) {
        tau[static_cast<size_t>(m)] = static_cast<double>(m) / (g - 1);
        const auto it =
            std::upper_bound(thresholds.begin(), thresholds.end(), tau[static_cast<size_t>(m)]);
        match[static_cast<size_t>(m)] = static_cast<double>(it - thresholds.begin()) / mc_samples;
    }
    match = isotonic_fit(match);
    for (size_t m = 1; m < match.size(); ++m)
        if (match[m] < match[m - 1])
            throw std::runtime_error("blended_argmax: non-monotone match curve (raise mc_samples)");
    const double base = match.front();
    const double span = match.back() - base;
    if (!(span > 0.0))
        throw std::runtime_error("blended_argmax: degenerate match curve (raise mc_samples)");
    for (auto& v : match) v = (v - base) / span;
    match.front() = 0.0;
    match.back() = 1.0;

    // Invert: beta(t) is the leftmost tau with normalized match equal to t.
    std::vector<double> t_nodes(static_cast<size_t>(g)), beta_nodes(static_cast<size_t>(g));
    size_t seg = 0;
    for (int m = 0; m < g; ++m) {
        const double t = static_cast<double>(m) / (g - 1);
        while (seg + 1 < match.size() && match[seg + 1] < t) ++seg;
        double raw;
        if (m == 0) {
            raw = 0.0;
        } else if (m == g - 1) {
            raw = 1.0;
        } else {
            const double lo = match[seg], hi = match[seg + 1];
            raw = hi > lo ? tau[seg] + (t - lo) / (hi - lo) * (tau[seg + 1] - tau[seg])
                          : tau[seg];
        }
        t_nodes[static_cast<size_t>(m)] = t;
        beta_nodes[static_cast<size_t>(m)] = lambda_blend * raw + (1.0 - lambda_blend) * t;
    }
    beta_nodes.front() = 0.0;
    beta_nodes.back() = 1.0;
    for (size_t m = 1; m < beta_nodes.size(); ++m)
        if (beta_nodes[m] < beta_nodes[m - 1])
            throw std::runtime_error("blended_argmax: non-monotone table (raise mc_samples)");

    Schedule s = make_tabulated(std::move(t_nodes), std::move(beta_nodes));
    s.kind_ = ScheduleKind::BlendedArgmax;
    s.lambda_blend_ = lambda_blend;
    return s;
}

size_t Schedule::cell_of(double t) const {
    const auto it = std::upper_bound(t_nodes_.begin(), t_nodes_.end(), t);
    size_t hi = static_cast<size_t>(it - t_nodes_.begin());
    if (hi == 0) return 0;
    if (hi >= t_nodes_.size()) return t_nodes_.size() - 2;
    return hi - 1;
}

double Schedule::beta(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::Linear) return t;
    const size_t i = cell_of(t);
    if (t == t_nodes_[i]) return beta_nodes_[i];
    if (t == t_nodes_[i + 1]) return beta_nodes_[i + 1];
    const double h = t_nodes_[i + 1] - t_nodes_[i];
    const double d0 = node_slope_[i], d1 = node_slope_[i + 1];
    const double slope = (beta_nodes_[i + 1] - beta_nodes_[i]) / h;
    const double c2 = (3.0 * slope - 2.0 * d0 - d1) / h;
    const double c3 = (d0 + d1 - 2.0 * slope) / (h * h);
    const double dt = t - t_nodes_[i];
    return beta_nodes_[i] + dt * (d0 + dt * (c2 + dt * c3));
}

double Schedule::beta_dot(double t) const {
    check_time(t);
    if (kind_ == ScheduleKind::Linear) return 1.0;
    const size_t i = cell_of(t);
    const double h = t_nodes_[i + 1] - t_nodes_[i];
    const double d0 = node_slope_[i], d1 = node_slope_[i + 1];
    const double slope = (beta_nodes_[i + 1] - beta_nodes_[i]) / h;
    const double c2 = (3.0 * slope - 2.0 * d0 - d1) / h;
    const double c3 = (d0 + d1 - 2.0 * slope) / (h * h);
    const double dt = t - t_nodes_[i];
    return d0 + dt * (2.0 * c2 + dt * 3.0 * c3);
}

std::pair<double, double> Schedule::alpha_beta(double t) const {
    const double b = beta(t);
    return {1.0 - b, b};
}

double Schedule::beta_inverse(double b) const {
    if (!(b >= 0.0 && b <= 1.0)) throw std::domain_error("beta_inverse: value outside [0, 1]");
    if (kind_ == ScheduleKind::Linear) return b;
    const auto it = std::lower_bound(beta_nodes_.begin(), beta_nodes_.end(), b);
    size_t hi = static_cast<size_t>(it - beta_nodes_.begin());
    if (hi == 0) return t_nodes_.front();
    if (hi >= beta_nodes_.size()) return t_nodes_.back();
    const size_t lo = hi - 1;
    if (b == beta_nodes_[lo]) return t_nodes_[lo];
    if (b == beta_nodes_[hi]) return t_nodes_[hi];
    if (beta_nodes_[hi] <= beta_nodes_[lo]) return t_nodes_[lo];  // flat: leftmost
    // bisection on the monotone cubic cell
    double a = t_nodes_[lo], c = t_nodes_[hi];
    for (int iter = 0; iter < 60; ++iter) {
        const double mid = 0.5 * (a + c);
        if (beta(mid) < b)
            a = mid;
        else
            c = mid;
    }
    return 0.5 * (a + c);
}

double Schedule::warp(double t, int pos, double* dwarp_dt) const {
    if (position_offsets_.empty()) {
        if (dwarp_dt) *dwarp_dt = 1.0;
        return t;
    }
    if (pos < 0 || pos >= n_positions()) throw std::out_of_range("Schedule: bad position");
    const double delta = position_offsets_.back();
    const double scale = 1.0 - delta;
    double u = (t - position_offsets_[static_cast<size_t>(pos)]) / scale;
    double du = 1.0 / scale;
    if (u <= 0.0) {
        u = 0.0;
        du = 0.0;
    } else if (u >= 1.0) {
        u = 1.0;
        du = 0.0;
    }
    if (dwarp_dt) *dwarp_dt = du;
    return u;
}

Schedule Schedule::with_position_stagger(int n_positions, double stagger) const {
    if (n_positions < 1) throw std::invalid_argument("position stagger: need L >= 1");
    if (stagger < 0.0) throw std::invalid_argument("position stagger: stagger must be >= 0");
    Schedule out = *this;
    out.position_offsets_.assign(static_cast<size_t>(n_positions), 0.0);
    if (n_positions > 1 && stagger > 0.0) {
        const double delta = stagger / (1.0 + stagger);
        for (int l = 0; l < n_positions; ++l)
            out.position_offsets_[static_cast<size_t>(l)] = delta * l / (n_positions - 1);
    }
    return out;
}

double Schedule::beta_at(double t, int pos) const {
    check_time(t);
    return beta(warp(t, pos, nullptr));
}

double Schedule::beta_dot_at(double t, int pos) const {
    check_time(t);
    double du = 0.0;
    const double u = warp(t, pos, &du);
    return beta_dot(u) * du;
}

std::pair<double, double> Schedule::alpha_beta_at(double t, int pos) const {
    const double b = beta_at(t, pos);
    return {1.0 - b, b};
}

CoefficientSet Schedule::coeffs_from_values(double as, double bs, double bds, double at, double bt,
                                            double bdt, double s, double t) const {
    CoefficientSet c;
    c.gamma = at / as;
    c.xi = bt - c.gamma * bs;
    // alpha = 1 - beta family: lambda = beta_dot / alpha, ell = -lambda.
    c.lam_s = bds / as;
    c.lam_t = bdt / at;  // infinite at t = 1, by design
    c.ell_s = -c.lam_s;
    c.ell_t = -c.lam_t;
    // C = Xi / lambda_t computed pole-free as Xi * alpha_t / beta_dot_t.
    c.c_lag = bdt > 0.0 ? c.xi * at / bdt : 0.0;
    c.kappa = c.gamma * c.lam_s / c.xi;
    (void)s;
    (void)t;
    return c;
}

CoefficientSet Schedule::coeffs(double s, double t) const {
    if (!(s >= 0.0 && s < t && t <= 1.0)) throw std::domain_error("coeffs: need 0 <= s < t <= 1");
    if (kind_ == ScheduleKind::Linear && !per_position()) {
        CoefficientSet c;
        c.gamma = (1.0 - t) / (1.0 - s);
        c.xi = (t - s) / (1.0 - s);
        c.lam_s = 1.0 / (1.0 - s);
        c.lam_t = 1.0 / (1.0 - t);
        c.ell_s = -c.lam_s;
        c.ell_t = -c.lam_t;
        c.c_lag = (t - s) * (1.0 - t) / (1.0 - s);
        c.kappa = (1.0 - t) / ((1.0 - s) * (t - s));
        return c;
    }
    const auto [as, bs] = alpha_beta(s);
    const auto [at, bt] = alpha_beta(t);
    return coeffs_from_values(as, bs, beta_dot(s), at, bt, beta_dot(t), s, t);
}

CoefficientSet Schedule::coeffs_at(double s, double t, int pos) const {
    if (!(s >= 0.0 && s < t && t <= 1.0))
        throw std::domain_error("coeffs_at: need 0 <= s < t <= 1");
    if (!per_position()) return coeffs(s, t);
    const auto [as, bs] = alpha_beta_at(s, pos);
    const auto [at, bt] = alpha_beta_at(t, pos);
    return coeffs_from_values(as, bs, beta_dot_at(s, pos), at, bt, beta_dot_at(t, pos), s, t);
}

double Schedule::semigroup_weight(double s, double u, double t) const {
    if (!(s < u && u < t)) throw std::domain_error("semigroup_weight: need s < u < t");
    const CoefficientSet su = coeffs(s, u);
    const CoefficientSet ut = coeffs(u, t);
    const CoefficientSet st = coeffs(s, t);
    return ut.gamma * su.xi / st.xi;
}

double Schedule::time_average_weight(double s, double t, double u) const {
    if (!(s <= u && u <= t)) throw std::domain_error("time_average_weight: need s <= u <= t");
    if (!(t < 1.0)) throw std::domain_error("time_average_weight: t must be < 1");
    if (!(s < t)) throw std::domain_error("time_average_weight: need s < t");
    const CoefficientSet st = coeffs(s, t);
    const auto [au, bu] = alpha_beta(u);
    const double at = 1.0 - beta(t);
    return at / st.xi * beta_dot(u) / (au * au);
}

std::string Schedule::describe() const {
    std::ostringstream os;
    switch (kind_) {
        case ScheduleKind::Linear: os << "linear"; break;
        case ScheduleKind::BlendedArgmax: os << "blended-argmax"; break;
        case ScheduleKind::Tabulated: os << "tabulated"; break;
    }
    os << ";lambda=" << format_double(lambda_blend_);
    if (!t_nodes_.empty()) {
        os << ";grid=";
        for (size_t i = 0; i < t_nodes_.size(); ++i) {
            if (i) os << ',';
            os << format_double(t_nodes_[i]) << ':' << format_double(beta_nodes_[i]);
        }
    }
    if (per_position()) {
        os << ";offsets=";
        for (size_t i = 0; i < position_offsets_.size(); ++i) {
            if (i) os << ',';
            os << format_double(position_offsets_[i]);
        }
    }
    return os.str();
}

Schedule Schedule::parse(const std::string& text) {
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : text) {
        if (ch == ';') {
            parts.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    parts.push_back(cur);
    if (parts.empty()) throw std::invalid_argument("Schedule::parse: empty descriptor");

    ScheduleKind kind;
    if (parts[0] == "linear")
        kind = ScheduleKind::Linear;
    else if (parts[0] == "blended-argmax")
        kind = ScheduleKind::BlendedArgmax;
    else if (parts[0] == "tabulated")
        kind = ScheduleKind::Tabulated;
    else
        throw std::invalid_argument("Schedule::parse: unknown kind " + parts[0]);

    double lambda = 0.0;
    std::vector<double> tn, bn, offs;
    for (size_t i = 1; i < parts.size(); ++i) {
        const auto eq = parts[i].find('=');
        if (eq == std::string::npos) continue;
        const std::string key = parts[i].substr(0, eq);
        const std::string val = parts[i].substr(eq + 1);
        if (key == "lambda") {
            lambda = std::strtod(val.c_str(), nullptr);
        } else if (key == "grid") {
            std::istringstream is(val);
            std::string item;
            while (std::getline(is, item, ',')) {
                const auto colon = item.find(':');
                if (colon == std::string::npos)
                    throw std::invalid_argument("Schedule::parse: bad grid entry");
                tn.push_back(std::strtod(item.substr(0, colon).c_str(), nullptr));
                bn.push_back(std::strtod(item.substr(colon + 1).c_str(), nullptr));
            }
        } else if (key == "offsets") {
            std::istringstream is(val);
            std::string item;
            while (std::getline(is, item, ',')) offs.push_back(std::strtod(item.c_str(), nullptr));
        }
    }

    Schedule s;
    if (kind == ScheduleKind::Linear) {
        s = make_linear();
    } else {
        s = make_tabulated(std::move(tn), std::move(bn));
        s.kind_ = kind;
        s.lambda_blend_ = lambda;
    }
    s.position_offsets_ = std::move(offs);
    return s;
}

}  // namespace dfm
