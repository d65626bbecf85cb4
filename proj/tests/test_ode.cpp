#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "rydemit/ode.hpp"

using Catch::Approx;
using rydemit::cvec;
using namespace std::complex_literals;

TEST_CASE("zero right hand side leaves the state untouched", "[ode]") {
    cvec y = {1.0 + 2.0i, -0.5i, 3.0};
    cvec y0 = y;
    auto rhs = [](double, const cvec&, cvec& dy) {
        std::fill(dy.begin(), dy.end(), 0.0);
    };
    rydemit::integrate_dopri5(rhs, 0.0, 5.0, y, {});
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y[i].real() == y0[i].real());
        CHECK(y[i].imag() == y0[i].imag());
    }
}

TEST_CASE("complex exponential decay matches the closed form", "[ode]") {
    const std::complex<double> lam = -1.0 + 2.0i;
    cvec y = {1.0 + 0.0i};
    auto rhs = [lam](double, const cvec& x, cvec& dy) { dy[0] = lam * x[0]; };
    rydemit::OdeOptions opt;
    opt.rtol = 1e-10;
    opt.atol = 1e-12;
    rydemit::integrate_dopri5(rhs, 0.0, 2.0, y, opt);
    std::complex<double> expect = std::exp(lam * 2.0);
    CHECK(std::abs(y[0] - expect) < 1e-9);
}

TEST_CASE("tighter tolerances shrink the error", "[ode]") {
    auto run = [](double rtol) {
        cvec y = {1.0 + 0.0i, 0.0 + 0.0i};
        // Harmonic oscillator written as a first order pair; solution is
        // (cos wt, sin wt) for w = 3.
        auto rhs = [](double, const cvec& x, cvec& dy) {
            dy[0] = -3.0 * x[1];
            dy[1] = 3.0 * x[0];
        };
        rydemit::OdeOptions opt;
        opt.rtol = rtol;
        opt.atol = rtol * 1e-2;
        rydemit::integrate_dopri5(rhs, 0.0, 10.0, y, opt);
        return std::abs(y[0] - std::cos(30.0)) + std::abs(y[1] - std::sin(30.0));
    };
    double loose = run(1e-5);
    double tight = run(1e-11);
    CHECK(tight < loose);
    CHECK(tight < 1e-8);
    CHECK(loose < 1e-3);
}

TEST_CASE("breakpoints let the solver step over a kink exactly", "[ode]") {
    // Coefficient jumps at t = 0.5; the piecewise solution is
    // exp(a*0.5) * exp(b*(t-0.5)).
    const double a = -0.3, b = -4.0;
    auto rhs = [a, b](double t, const cvec& x, cvec& dy) {
        dy[0] = (t < 0.5 ? a : b) * x[0];
    };
    cvec y = {1.0 + 0.0i};
    rydemit::OdeOptions opt;
    opt.rtol = 1e-10;
    opt.atol = 1e-12;
    rydemit::integrate_dopri5(rhs, 0.0, 1.0, y, opt, {0.5});
    double expect = std::exp(a * 0.5 + b * 0.5);
    CHECK(y[0].real() == Approx(expect).epsilon(1e-8));
    CHECK(std::abs(y[0].imag()) < 1e-12);
}

TEST_CASE("sample times are landed exactly and in order", "[ode]") {
    std::vector<double> hits;
    auto rhs = [](double, const cvec& x, cvec& dy) { dy[0] = -x[0]; };
    cvec y = {1.0 + 0.0i};
    std::vector<double> want = {0.1, 0.37, 0.371, 2.0, 2.999, 3.0};
    rydemit::integrate_dopri5(
        rhs, 0.0, 3.0, y, {}, {}, want,
        [&hits](double t, const cvec& x) {
            hits.push_back(t);
            // The sampled state should match the analytic decay as well.
            CHECK(std::abs(x[0] - std::exp(-t)) < 1e-7);
        });
    REQUIRE(hits.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(hits[i] == want[i]);
}

TEST_CASE("step budget exhaustion raises a stiffness error", "[ode]") {
    auto rhs = [](double t, const cvec& x, cvec& dy) {
        dy[0] = std::complex<double>(0.0, 1e9) * x[0] * std::cos(t);
    };
    cvec y = {1.0 + 0.0i};
    rydemit::OdeOptions opt;
    opt.max_steps = 50;
    CHECK_THROWS_AS(rydemit::integrate_dopri5(rhs, 0.0, 100.0, y, opt),
                    rydemit::StiffnessError);
}

TEST_CASE("bad integration windows are rejected", "[ode]") {
    auto rhs = [](double, const cvec&, cvec& dy) { dy[0] = 0.0; };
    cvec y = {1.0 + 0.0i};
    CHECK_THROWS_AS(rydemit::integrate_dopri5(rhs, 1.0, 0.0, y, {}),
                    rydemit::UsageError);
    CHECK_THROWS_AS(
        rydemit::integrate_dopri5(rhs, 0.0, 1.0, y, {}, {}, {1.5}, nullptr),
        rydemit::UsageError);
    CHECK_THROWS_AS(
        rydemit::integrate_dopri5(rhs, 0.0, 1.0, y, {}, {}, {-0.1}, nullptr),
        rydemit::UsageError);
}

TEST_CASE("detuned two level drive reproduces the Rabi formula", "[ode]") {
    // H = [[0, W/2], [W/2, -d]] acting on (c_g, c_e) with dy = -i H y.
    // Closed form: c_e(t) = -i (W/Wd) sin(Wd t / 2) exp(i d t / 2),
    // Wd = sqrt(W^2 + d^2).
    const double W = 5.0, d = -3.0;
    const double Wd = std::hypot(W, d);
    auto rhs = [W, d](double, const cvec& x, cvec& dy) {
        dy[0] = -1.0i * (0.5 * W * x[1]);
        dy[1] = -1.0i * (0.5 * W * x[0] - d * x[1]);
    };
    cvec y = {1.0 + 0.0i, 0.0 + 0.0i};
    rydemit::OdeOptions opt;
    opt.rtol = 1e-11;
    opt.atol = 1e-13;
    for (double t : {0.4, 1.1, 2.7}) {
        y = {1.0 + 0.0i, 0.0 + 0.0i};
        rydemit::integrate_dopri5(rhs, 0.0, t, y, opt);
        std::complex<double> ph = std::exp(0.5i * d * t);
        std::complex<double> ce =
            -1.0i * (W / Wd) * std::sin(0.5 * Wd * t) * ph;
        std::complex<double> cg =
            ph * (std::cos(0.5 * Wd * t) - 1.0i * (d / Wd) * std::sin(0.5 * Wd * t));
        CHECK(std::abs(y[1] - ce) < 1e-9);
        CHECK(std::abs(y[0] - cg) < 1e-9);
    }
}

TEST_CASE("stops a rounding error from an edge are absorbed", "[ode]") {
    auto rhs = [](double, const cvec& x, cvec& dy) { dy[0] = -x[0]; };
    rydemit::OdeOptions opt;
    opt.rtol = 1e-10;
    opt.atol = 1e-12;

    // Pulse edges rescaled onto the window end land one ulp inside it;
    // that must not force a sub-epsilon step.
    double t1 = 1.25;
    cvec y = {1.0 + 0.0i};
    std::vector<double> events = {std::nextafter(t1, 0.0), 0.3,
                                  std::nextafter(0.0, 1.0)};
    rydemit::integrate_dopri5(rhs, 0.0, t1, y, opt, events);
    CHECK(std::abs(y[0] - std::exp(-t1)) < 1e-9);

    // Same for two interior stops next to each other.
    cvec z = {1.0 + 0.0i};
    std::vector<double> close = {0.3, std::nextafter(0.3, 1.0)};
    int landed = 0;
    rydemit::integrate_dopri5(
        rhs, 0.0, 1.0, z, opt, close, {0.3, 1.0},
        [&](double, const cvec&) { ++landed; });
    CHECK(landed == 2);
    CHECK(std::abs(z[0] - std::exp(-1.0)) < 1e-9);
}
