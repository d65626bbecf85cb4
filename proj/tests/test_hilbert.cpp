#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <complex>
#include <vector>

#include "rydemit/config.hpp"
#include "rydemit/ensemble.hpp"
#include "rydemit/hilbert.hpp"

using Catch::Approx;
using rydemit::PhysicalConfig;
using rydemit::PulseSequence;
using rydemit::ensemble::AtomSet;
using rydemit::hilbert::Level;
using rydemit::hilbert::TruncatedBasis;
using cd = std::complex<double>;

namespace {

// Closed-form eigenvalues of a 3x3 Hermitian matrix (trigonometric method).
// Returned ascending.  The caller should sanity-check them against the
// matrix invariants; we do so in the test that uses this.
std::array<double, 3> herm3_eigenvalues(const std::array<std::array<cd, 3>, 3>& A) {
    double p1 = std::norm(A[0][1]) + std::norm(A[0][2]) + std::norm(A[1][2]);
    double tr = std::real(A[0][0] + A[1][1] + A[2][2]);
    double q = tr / 3.0;
    double p2 = 0.0;
    for (int i = 0; i < 3; ++i) {
        double d = std::real(A[i][i]) - q;
        p2 += d * d;
    }
    p2 += 2.0 * p1;
    double p = std::sqrt(p2 / 6.0);
    std::array<std::array<cd, 3>, 3> B;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            B[i][j] = (A[i][j] - (i == j ? cd(q) : cd(0.0))) / p;
    cd detB = B[0][0] * (B[1][1] * B[2][2] - B[1][2] * B[2][1]) -
              B[0][1] * (B[1][0] * B[2][2] - B[1][2] * B[2][0]) +
              B[0][2] * (B[1][0] * B[2][1] - B[1][1] * B[2][0]);
    double r = std::clamp(std::real(detB) / 2.0, -1.0, 1.0);
    double phi = std::acos(r) / 3.0;
    double e0 = q + 2.0 * p * std::cos(phi);
    double e2 = q + 2.0 * p * std::cos(phi + 2.0 * rydemit::units::pi / 3.0);
    double e1 = tr - e0 - e2;
    std::array<double, 3> out = {e0, e1, e2};
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("basis dimension counts all retained sectors", "[hilbert]") {
    CHECK(TruncatedBasis(1).dim() == 4);
    CHECK(TruncatedBasis(2).dim() == 16);
    CHECK(TruncatedBasis(3).dim() == 64);   // triples switch on at 3 atoms
    CHECK(TruncatedBasis(5).dim() == 196);
    CHECK(TruncatedBasis(2).with_triples() == false);
    CHECK(TruncatedBasis(3).with_triples() == true);
    CHECK_THROWS_AS(TruncatedBasis(0), rydemit::ConfigError);
}

TEST_CASE("state labels round trip through the index maps", "[hilbert]") {
    for (int N : {1, 2, 4}) {
        TruncatedBasis basis(N);
        std::vector<std::string> seen;
        for (int idx = 0; idx < basis.dim(); ++idx) {
            const auto& lab = basis.label(idx);
            int back = -1;
            switch (lab.kind) {
                case rydemit::hilbert::StateLabel::Ground:
                    back = basis.ground();
                    break;
                case rydemit::hilbert::StateLabel::Single:
                    back = basis.single(lab.a, lab.la);
                    break;
                case rydemit::hilbert::StateLabel::Double:
                    back = basis.dbl(lab.a, lab.la, lab.b, lab.lb);
                    break;
                case rydemit::hilbert::StateLabel::EffTriple:
                    back = basis.eff(lab.a, lab.la, lab.b, lab.lb);
                    break;
            }
            CHECK(back == idx);
            seen.push_back(lab.str());
        }
        std::sort(seen.begin(), seen.end());
        CHECK(std::adjacent_find(seen.begin(), seen.end()) == seen.end());
    }
}

TEST_CASE("pair accessors are order insensitive", "[hilbert]") {
    TruncatedBasis basis(4);
    CHECK(basis.dbl(2, Level::r, 0, Level::i) ==
          basis.dbl(0, Level::i, 2, Level::r));
    CHECK(basis.eff(3, Level::e, 1, Level::r) ==
          basis.eff(1, Level::r, 3, Level::e));
    // Distinct level assignments on the same pair are distinct states.
    CHECK(basis.dbl(0, Level::r, 1, Level::i) !=
          basis.dbl(0, Level::i, 1, Level::r));
}

TEST_CASE("quadrature helper integrates smooth functions", "[hilbert]") {
    double s = rydemit::hilbert::simpson(
        [](double t) { return std::sin(t); }, 0.0, rydemit::units::pi);
    CHECK(s == Approx(2.0).margin(1e-10));
    // Simpson is exact for cubics.
    double c = rydemit::hilbert::simpson(
        [](double t) { return 3.0 * t * t - 2.0 * t + 1.0; }, 0.0, 1.0, 9);
    CHECK(c == Approx(1.0).margin(1e-13));
}

TEST_CASE("Doppler shifted detunings use the signed wavevectors", "[hilbert]") {
    PhysicalConfig cfg;
    AtomSet atoms;
    atoms.push(0.3, 0.0, 0.0, 0.25, 0.0, 0.0, rydemit::ensemble::kInf);
    CHECK(rydemit::hilbert::doppler_delta(0, atoms, 0, cfg) ==
          Approx(cfg.delta1 - cfg.k1() * 0.25).margin(1e-12));
    CHECK(rydemit::hilbert::doppler_delta(1, atoms, 0, cfg) ==
          Approx(cfg.delta2 - cfg.k2() * 0.25).margin(1e-12));
    CHECK(rydemit::hilbert::doppler_delta(2, atoms, 0, cfg) ==
          Approx(cfg.delta3 - cfg.k3() * 0.25).margin(1e-12));
    // The two counter-propagating beams shift in the opposite sense.
    CHECK(cfg.k1() > 0.0);
    CHECK(cfg.k2() < 0.0);
    CHECK(cfg.k3() < 0.0);
}

TEST_CASE("time averaged Rabi couplings carry envelope and phase", "[hilbert]") {
    PhysicalConfig cfg;
    PulseSequence pulses;
    AtomSet atoms;
    atoms.push(0.4, 0.0, 0.0, 0.0, 0.0, 0.0, rydemit::ensemble::kInf);   // on axis
    atoms.push(0.1, 0.3, -0.1, 0.0, 0.0, 0.0, rydemit::ensemble::kInf);  // off axis
    atoms.push(0.2, 0.5, 0.0, 0.0, 0.08, -0.03, rydemit::ensemble::kInf);

    cd m0 = rydemit::hilbert::mean_rabi(0, atoms, 0, cfg, pulses);
    CHECK(std::abs(m0) == Approx(pulses.omega[0]).epsilon(1e-12));
    CHECK(std::remainder(std::arg(m0) - cfg.k1() * 0.4,
                         rydemit::units::two_pi) == Approx(0.0).margin(1e-12));

    double rho2 = 0.3 * 0.3 + 0.1 * 0.1;
    cd m1 = rydemit::hilbert::mean_rabi(0, atoms, 1, cfg, pulses);
    CHECK(std::abs(m1) ==
          Approx(pulses.omega[0] *
                 std::exp(-rho2 / (cfg.waist1 * cfg.waist1))).epsilon(1e-12));

    // Moving atom: check against an independent fine quadrature.
    double inv = 1.0 / (cfg.waist1 * cfg.waist1);
    const int segs = 1600;
    double t_on = pulses.start[0], t_off = pulses.end(0);
    double h = (t_off - t_on) / segs;
    double acc = 0.0;
    for (int k = 0; k <= segs; ++k) {
        double t = t_on + k * h;
        double f = std::exp(-atoms.rho2_at(2, t) * inv);
        if (k == 0 || k == segs)
            acc += f;
        else
            acc += (k % 2 ? 4.0 : 2.0) * f;
    }
    double mean_env = acc * h / 3.0 / (t_off - t_on);
    cd m2 = rydemit::hilbert::mean_rabi(0, atoms, 2, cfg, pulses);
    CHECK(std::abs(m2) == Approx(pulses.omega[0] * mean_env).epsilon(1e-8));
    CHECK(std::remainder(std::arg(m2) - cfg.k1() * 0.2,
                         rydemit::units::two_pi) == Approx(0.0).margin(1e-12));
}

TEST_CASE("identical spectators leave the dressed pair uncorrected", "[hilbert]") {
    const int N = 5;
    cd amp = 20.0 * std::exp(cd(0.0, 0.7));
    std::vector<cd> rabi(N, amp);
    std::vector<double> det(N, -628.3);
    auto ec = rydemit::hilbert::effective_coupling(0, 1, rabi, det);
    // No detuning spread means the perturbation vanishes identically.
    CHECK(ec.e_plus == Approx(ec.e_plus0).margin(1e-12));
    CHECK(ec.e_minus == Approx(ec.e_minus0).margin(1e-12));
    CHECK(ec.delta_eff == Approx(-628.3).margin(1e-9));
    // Collective Rabi is the quadrature sum over the three spectators.
    double G2 = 3.0 * std::norm(0.5 * amp);
    CHECK(ec.omega_eff == Approx(2.0 * std::sqrt(G2)).margin(1e-9));
}

TEST_CASE("resonant collective drive splits symmetrically", "[hilbert]") {
    std::vector<cd> rabi = {cd(9.0), cd(9.0), cd(4.0), cd(6.0, 2.0)};
    std::vector<double> det(4, 0.0);
    auto ec = rydemit::hilbert::effective_coupling(0, 1, rabi, det);
    double G = std::sqrt(std::norm(0.5 * rabi[2]) + std::norm(0.5 * rabi[3]));
    CHECK(ec.e_plus0 == Approx(G).margin(1e-12));
    CHECK(ec.e_minus0 == Approx(-G).margin(1e-12));
    CHECK(ec.delta_eff == Approx(0.0).margin(1e-9));
}

TEST_CASE("third order correction tracks the exact block spectrum", "[hilbert]") {
    // Two spectators with a detuning spread small against every level gap,
    // which is the domain the nondegenerate expansion is built for.  The
    // exact block is a 3x3 Hermitian matrix with a closed-form spectrum.
    struct Scenario {
        std::vector<cd> rabi;
        std::vector<double> det;
        double tol;
    };
    // First case: resonant mean detuning, gaps of order the collective
    // Rabi.  Second case: far detuned, where the upper dressed level sits
    // only G^2/|dbar| above the dark manifold, so the spread must be small.
    std::vector<Scenario> cases = {
        {{cd(0.0), cd(0.0), 14.0 * std::exp(cd(0.0, 0.4)),
          22.0 * std::exp(cd(0.0, -1.1))},
         {0.0, 0.0, -1.5, 1.5},
         0.02},
        {{cd(0.0), cd(0.0), 80.0 * std::exp(cd(0.0, 0.9)),
          66.0 * std::exp(cd(0.0, -0.3))},
         {0.0, 0.0, -627.9, -628.7},
         2e-3},
    };
    for (const auto& sc : cases) {
        auto ec = rydemit::hilbert::effective_coupling(0, 1, sc.rabi, sc.det);

        std::array<std::array<cd, 3>, 3> H{};
        H[0][0] = 0.0;
        for (int l = 0; l < 2; ++l) {
            cd g = 0.5 * sc.rabi[2 + l];
            H[0][1 + l] = std::conj(g);
            H[1 + l][0] = g;
            H[1 + l][1 + l] = -sc.det[2 + l];
        }
        auto eig = herm3_eigenvalues(H);
        // Validate the closed-form roots against the matrix invariants
        // before trusting them as an oracle.
        double tr = std::real(H[0][0] + H[1][1] + H[2][2]);
        CHECK(eig[0] + eig[1] + eig[2] == Approx(tr).margin(1e-7));
        cd det3 = H[0][0] * (H[1][1] * H[2][2] - H[1][2] * H[2][1]) -
                  H[0][1] * (H[1][0] * H[2][2] - H[1][2] * H[2][0]) +
                  H[0][2] * (H[1][0] * H[2][1] - H[1][1] * H[2][0]);
        CHECK(eig[0] * eig[1] * eig[2] == Approx(std::real(det3)).epsilon(1e-7));

        // Match each dressed level to the nearest exact eigenvalue.
        auto nearest = [&eig](double e) {
            double best = eig[0];
            for (double x : eig)
                if (std::abs(x - e) < std::abs(best - e)) best = x;
            return best;
        };
        double exact_plus = nearest(ec.e_plus0);
        double exact_minus = nearest(ec.e_minus0);
        REQUIRE(exact_plus != exact_minus);
        CHECK(std::abs(ec.e_plus - exact_plus) < sc.tol);
        CHECK(std::abs(ec.e_minus - exact_minus) < sc.tol);
        // The corrections must actually help relative to the degenerate
        // model on at least the branch the spread pushes hardest.
        double gain0 = std::abs(ec.e_plus0 - exact_plus) +
                       std::abs(ec.e_minus0 - exact_minus);
        double gain = std::abs(ec.e_plus - exact_plus) +
                      std::abs(ec.e_minus - exact_minus);
        CHECK(gain < gain0);
    }
}

TEST_CASE("degenerate dressing is refused", "[hilbert]") {
    std::vector<cd> zero(4, cd(0.0));
    std::vector<double> det(4, -600.0);
    CHECK_THROWS_AS(rydemit::hilbert::effective_coupling(0, 1, zero, det),
                    rydemit::DegenerateError);
    std::vector<cd> two(2, cd(5.0));
    std::vector<double> det2(2, -600.0);
    CHECK_THROWS_AS(rydemit::hilbert::effective_coupling(0, 1, two, det2),
                    rydemit::ConfigError);
}

TEST_CASE("indirect couplings enumerate ordered spectator hops", "[hilbert]") {
    PhysicalConfig cfg;
    PulseSequence pulses;
    AtomSet atoms;
    atoms.push(0.20, 0.1, 0.0, 0.02, 0.00, 0.01, rydemit::ensemble::kInf);
    atoms.push(0.45, -0.2, 0.1, -0.05, 0.03, 0.00, rydemit::ensemble::kInf);
    atoms.push(0.70, 0.0, -0.1, 0.03, -0.02, 0.02, rydemit::ensemble::kInf);
    atoms.push(0.90, 0.2, 0.2, -0.01, 0.01, -0.03, rydemit::ensemble::kInf);
    TruncatedBasis basis(4);
    auto fits = rydemit::ensemble::polyfit_channels(atoms, cfg, 0.0, 2.0);
    auto terms = rydemit::hilbert::indirect_hamiltonian_terms(atoms, cfg,
                                                              pulses, basis, fits);
    // Four choices of the pinned atom, three spectator pairs each.
    REQUIRE(terms.size() == 12);
    for (const auto& t : terms) {
        REQUIRE(t.atom_m < t.atom_l);
        REQUIRE(t.atom_n != t.atom_m);
        REQUIRE(t.atom_n != t.atom_l);
        CHECK(t.row == basis.dbl(t.atom_n, Level::r, t.atom_l, Level::i));
        CHECK(t.col == basis.dbl(t.atom_n, Level::r, t.atom_m, Level::i));

        double den = 0.0;
        for (int j : {0, 1})
            den += rydemit::hilbert::doppler_delta(j, atoms, t.atom_n, cfg);
        den += rydemit::hilbert::doppler_delta(0, atoms, t.atom_m, cfg);
        den += rydemit::hilbert::doppler_delta(0, atoms, t.atom_l, cfg);
        cd expect = 0.25 * pulses.omega[0] * pulses.omega[0] / den *
                    std::exp(cd(0.0, cfg.k1() * (atoms.x[t.atom_l] -
                                                 atoms.x[t.atom_m])));
        CHECK(std::abs(t.static_coeff - expect) < 1e-10 * std::abs(expect));

        // Product polynomial really is the product of the two envelope fits.
        for (double tau : {0.1, 0.8, 1.6}) {
            double prod = fits.envelope[0][t.atom_l].eval(tau) *
                          fits.envelope[0][t.atom_m].eval(tau);
            CHECK(t.envelope_product.eval(tau) == Approx(prod).margin(1e-12));
        }
    }
}

TEST_CASE("vanishing hop denominator is reported as singular", "[hilbert]") {
    PhysicalConfig cfg;
    PulseSequence pulses;
    // Arrange velocities so one (n, m, l) combination nulls the denominator.
    double vm = -70.0, vl = -70.0;
    double d1m = cfg.delta1 - cfg.k1() * vm;
    double d1l = cfg.delta1 - cfg.k1() * vl;
    // Solve (delta1 + delta2) - (k1 + k2) vn + d1m + d1l = 0 for vn.
    double vn = (cfg.delta1 + cfg.delta2 + d1m + d1l) / (cfg.k1() + cfg.k2());
    AtomSet atoms;
    atoms.push(0.2, 0.0, 0.0, vn, 0.0, 0.0, rydemit::ensemble::kInf);
    atoms.push(0.5, 0.0, 0.0, vm, 0.0, 0.0, rydemit::ensemble::kInf);
    atoms.push(0.8, 0.0, 0.0, vl, 0.0, 0.0, rydemit::ensemble::kInf);
    TruncatedBasis basis(3);
    auto fits = rydemit::ensemble::polyfit_channels(atoms, cfg, 0.0, 2.0);
    CHECK_THROWS_AS(rydemit::hilbert::indirect_hamiltonian_terms(
                        atoms, cfg, pulses, basis, fits),
                    rydemit::SingularError);
}
