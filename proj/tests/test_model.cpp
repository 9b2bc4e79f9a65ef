#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "dfm/model.hpp"
#include "dfm/oracle.hpp"
#include "dfm/rng.hpp"

using namespace dfm;

namespace {

ModelArch small_arch() {
    ModelArch a;
    a.hidden_width = 16;
    a.n_layers = 2;
    a.seq_len = 2;
    a.vocab_size = 4;
    return a;
}

Mat random_state(Rng& rng, int L, int K) {
    Mat x(L, K);
    for (auto& v : x.data()) v = rng.normal(0.0, 1.0);
    return x;
}

}  // namespace

TEST_CASE("same seed gives bit-identical parameters") {
    const DenoiserModel a(small_arch(), Schedule::make_linear(), 42);
    const DenoiserModel b(small_arch(), Schedule::make_linear(), 42);
    CHECK(a.params() == b.params());
    const DenoiserModel c(small_arch(), Schedule::make_linear(), 43);
    CHECK(a.params() != c.params());
}

TEST_CASE("fresh model on zero input yields finite logits") {
    const DenoiserModel m(small_arch(), Schedule::make_linear(), 1);
    const Mat z = m.forward(Mat(2, 4), 0.2, 0.7);
    for (double v : z.data()) CHECK(std::isfinite(v));
}

TEST_CASE("parameter count matches the documented formula") {
    // P = H(Din+1) + H(2H+1) + (N-1)H(H+1) + K(H+1), Din = K + L + 2 (+2K+1 cond)
    ModelArch a;
    a.hidden_width = 64;
    a.n_layers = 2;
    a.seq_len = 1;
    a.vocab_size = 8;
    const size_t din = 8 + 1 + 2;
    const size_t expect = 64 * (din + 1) + 64 * (2 * 64 + 1) + 1 * 64 * 65 + 8 * 65;
    CHECK(DenoiserModel::param_count(a) == expect);
    const DenoiserModel m(a, Schedule::make_linear(), 0);
    CHECK(m.params().size() == expect);

    a.conditional = true;
    const size_t din_c = din + 2 * 8 + 1;
    CHECK(DenoiserModel::param_count(a) ==
          64 * (din_c + 1) + 64 * (2 * 64 + 1) + 1 * 64 * 65 + 8 * 65);
}

TEST_CASE("constructor rejects degenerate shapes") {
    ModelArch a = small_arch();
    a.hidden_width = 0;
    CHECK_THROWS_AS(DenoiserModel(a, Schedule::make_linear(), 0), std::invalid_argument);
}

TEST_CASE("diagonal convenience query equals forward at (t, t)") {
    const DenoiserModel m(small_arch(), Schedule::make_linear(), 5);
    Rng rng(1);
    const Mat x = random_state(rng, 2, 4);
    CHECK(max_abs_diff(m.forward(x, 0.3, 0.3), m.forward_diag(x, 0.3)) == 0.0);
}

TEST_CASE("forward rejects bad inputs") {
    const DenoiserModel m(small_arch(), Schedule::make_linear(), 5);
    Mat x(2, 4);
    x(0, 0) = std::nan("");
    CHECK_THROWS_AS(m.forward(x, 0.1, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(m.forward(Mat(2, 4), 0.6, 0.5), std::domain_error);
    const std::vector<int> ctx{1};
    CHECK_THROWS_AS(m.forward(Mat(2, 4), 0.1, 0.5, &ctx), std::invalid_argument);
}

TEST_CASE("conditional model is sensitive to its context") {
    ModelArch a = small_arch();
    a.conditional = true;
    const DenoiserModel m(a, Schedule::make_linear(), 7);
    Rng rng(2);
    const Mat x = random_state(rng, 2, 4);
    const std::vector<int> c1{0, 1}, c2{3, 3};
    const Mat z1 = m.forward(x, 0.2, 0.8, &c1);
    const Mat z2 = m.forward(x, 0.2, 0.8, &c2);
    CHECK(max_abs_diff(z1, z2) > 1e-8);
    const Mat z_drop = m.forward(x, 0.2, 0.8, nullptr);
    CHECK(max_abs_diff(z1, z_drop) > 1e-8);

    std::vector<int> too_long(static_cast<size_t>(a.max_context) + 1, 0);
    CHECK_THROWS_AS(m.forward(x, 0.2, 0.8, &too_long), std::invalid_argument);
}

TEST_CASE("reverse-mode gradient matches finite differences") {
    DenoiserModel m(small_arch(), Schedule::make_linear(), 11);
    Rng rng(3);
    const Mat x = random_state(rng, 2, 4);
    Mat upstream(2, 4);
    for (auto& v : upstream.data()) v = rng.normal(0.0, 1.0);

    const GradBundle g = m.backward(upstream, x, 0.25, 0.7);
    const double h = 1e-5;
    for (int probe = 0; probe < 20; ++probe) {
        const size_t i =
            static_cast<size_t>(rng.uniform_int(static_cast<int>(m.params().size())));
        const double save = m.params()[i];
        auto eval = [&] {
            const Mat z = m.forward(x, 0.25, 0.7);
            double loss = 0.0;
            for (size_t j = 0; j < z.size(); ++j) loss += upstream.data()[j] * z.data()[j];
            return loss;
        };
        m.params()[i] = save + h;
        const double up = eval();
        m.params()[i] = save - h;
        const double dn = eval();
        m.params()[i] = save;
        const double fd = (up - dn) / (2.0 * h);
        const double ref = std::max(std::abs(fd), 1e-8);
        CHECK(std::abs(fd - g.param_grad[i]) / ref < 1e-4);
    }
}

TEST_CASE("zero cotangent gives zero gradient") {
    const DenoiserModel m(small_arch(), Schedule::make_linear(), 13);
    Rng rng(4);
    const GradBundle g = m.backward(Mat(2, 4), random_state(rng, 2, 4), 0.1, 0.9);
    for (double v : g.param_grad) CHECK(v == 0.0);
}

TEST_CASE("dz_dt vanishes when time features are disconnected") {
    ModelArch a = small_arch();
    DenoiserModel m(a, Schedule::make_linear(), 17);
    // zero the encoder columns that read beta(s), beta(t)
    const int din = DenoiserModel::feature_dim(a);
    const int time_col = a.vocab_size + a.seq_len;  // beta_s, then beta_t
    for (int hcol = 0; hcol < a.hidden_width; ++hcol)
        for (int d = time_col; d < time_col + 2; ++d)
            m.params()[static_cast<size_t>(hcol) * din + d] = 0.0;
    Rng rng(5);
    const Mat x = random_state(rng, 2, 4);
    const Mat dz = m.dz_dt(x, 0.2, 0.6);
    for (double v : dz.data()) CHECK(v == 0.0);
    const Mat ds = m.total_derivative_s(x, 0.2, 0.6, Mat(2, 4));
    for (double v : ds.data()) CHECK(v == 0.0);
}

TEST_CASE("dz_dt matches central differences") {
    const DenoiserModel m(small_arch(), Schedule::make_linear(), 19);
    Rng rng(6);
    const Mat x = random_state(rng, 2, 4);
    const double s = 0.15, t = 0.55, h = 1e-3;
    const Mat dz = m.dz_dt(x, s, t);
    const Mat hi = m.forward(x, s, t + h);
    const Mat lo = m.forward(x, s, t - h);
    for (size_t i = 0; i < dz.size(); ++i) {
        const double fd = (hi.data()[i] - lo.data()[i]) / (2.0 * h);
        const double ref = std::max(std::abs(fd), 1e-6);
        CHECK(std::abs(fd - dz.data()[i]) / ref < 1e-5);
    }
}

TEST_CASE("dz_dt scales with the output head") {
    ModelArch a = small_arch();
    DenoiserModel m(a, Schedule::make_linear(), 23);
    Rng rng(7);
    const Mat x = random_state(rng, 2, 4);
    const Mat before = m.dz_dt(x, 0.1, 0.8);
    for (size_t i = m.output_head_offset(); i < m.params().size(); ++i) m.params()[i] *= 2.0;
    const Mat after = m.dz_dt(x, 0.1, 0.8);
    for (size_t i = 0; i < before.size(); ++i)
        CHECK(after.data()[i] == doctest::Approx(2.0 * before.data()[i]).epsilon(1e-12));
}

TEST_CASE("total derivative matches central differences along the curve") {
    const DenoiserModel m(small_arch(), Schedule::make_linear(), 29);
    Rng rng(8);
    const Mat x = random_state(rng, 2, 4);
    const Mat v = random_state(rng, 2, 4);
    const double s = 0.2, t = 0.7, h = 1e-3;
    const Mat ds = m.total_derivative_s(x, s, t, v);
    auto central = [&](double hh) {
        const Mat hi = m.forward(axby(1.0, x, hh, v), s + hh, t);
        const Mat lo = m.forward(axby(1.0, x, -hh, v), s - hh, t);
        return axby(0.5 / hh, hi, -0.5 / hh, lo);
    };
    // Richardson-extrapolated central difference keeps FD truncation below
    // the 1e-5 agreement tolerance.
    const Mat fd = axby(4.0 / 3.0, central(0.5 * h), -1.0 / 3.0, central(h));
    for (size_t i = 0; i < ds.size(); ++i) {
        const double ref = std::max(std::abs(fd.data()[i]), 1e-6);
        CHECK(std::abs(fd.data()[i] - ds.data()[i]) / ref < 1e-5);
    }
}

TEST_CASE("total derivative is affine in the tangent direction") {
    const DenoiserModel m(small_arch(), Schedule::make_linear(), 31);
    Rng rng(9);
    const Mat x = random_state(rng, 2, 4);
    const Mat v1 = random_state(rng, 2, 4);
    const Mat v2 = random_state(rng, 2, 4);
    const Mat lhs = m.total_derivative_s(x, 0.3, 0.6, axby(1.0, v1, 1.0, v2));
    // D_s with v1+v2 = J v1 + J v2 + d/ds; assemble from three calls
    const Mat d1 = m.total_derivative_s(x, 0.3, 0.6, v1);
    const Mat d2 = m.total_derivative_s(x, 0.3, 0.6, v2);
    const Mat d0 = m.total_derivative_s(x, 0.3, 0.6, Mat(2, 4));  // pure d/ds part
    const Mat rhs = axby(1.0, axby(1.0, d1, 1.0, d2), -1.0, d0);
    CHECK(max_abs_diff(lhs, rhs) < 1e-10);
}

TEST_CASE("forward and reverse mode agree on dual pairings") {
    const DenoiserModel m(small_arch(), Schedule::make_linear(), 37);
    Rng rng(10);
    const Mat x = random_state(rng, 2, 4);
    for (int trial = 0; trial < 10; ++trial) {
        const Mat tangent = random_state(rng, 2, 4);
        Mat cotangent(2, 4);
        for (auto& v : cotangent.data()) v = rng.normal(0.0, 1.0);
        // <cotangent, J_x z tangent> via forward mode
        const Mat jvp = m.jvp(x, 0.3, 0.8, &tangent, 0.0, 0.0).dz;
        double lhs = 0.0;
        for (size_t i = 0; i < jvp.size(); ++i) lhs += cotangent.data()[i] * jvp.data()[i];
        // same pairing via reverse mode on the inputs (finite-difference-free):
        // reverse through x is not exposed, so pair against the directional
        // derivative of <cotangent, z> instead.
        auto pair_loss = [&](const Mat& xx) {
            const Mat z = m.forward(xx, 0.3, 0.8);
            double acc = 0.0;
            for (size_t i = 0; i < z.size(); ++i) acc += cotangent.data()[i] * z.data()[i];
            return acc;
        };
        const double h = 1e-6;
        const double rhs =
            (pair_loss(axby(1.0, x, h, tangent)) - pair_loss(axby(1.0, x, -h, tangent))) /
            (2.0 * h);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
    }
}

TEST_CASE("model psi rows are simplex points by construction") {
    const DenoiserModel m(small_arch(), Schedule::make_linear(), 41);
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const Mat psi = m.psi(random_state(rng, 2, 4), 0.1, 0.9);
        for (int l = 0; l < psi.rows(); ++l) {
            double sum = 0.0;
            for (int k = 0; k < psi.cols(); ++k) {
                CHECK(psi(l, k) >= 0.0);
                sum += psi(l, k);
            }
            CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("per-position schedule feeds per-position time features") {
    ModelArch a = small_arch();
    const Schedule stag = Schedule::make_linear().with_position_stagger(a.seq_len, 0.5);
    const DenoiserModel m(a, stag, 43);
    Rng rng(12);
    const Mat x = random_state(rng, 2, 4);
    const Mat dz = m.dz_dt(x, 0.2, 0.6);
    const Mat hi = m.forward(x, 0.2, 0.6 + 1e-3);
    const Mat lo = m.forward(x, 0.2, 0.6 - 1e-3);
    for (size_t i = 0; i < dz.size(); ++i) {
        const double fd = (hi.data()[i] - lo.data()[i]) / 2e-3;
        CHECK(std::abs(fd - dz.data()[i]) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
}
