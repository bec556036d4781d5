#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "json.hpp"
#include "lgcp/errors.hpp"
#include "lgcp/igmrf.hpp"
#include "lgcp/rng.hpp"
#include "support.hpp"

using namespace lgcp;

TEST_CASE("interior rows carry the 13-point biharmonic stencil") {
    const StructureMatrix R = build_rw2d(5, 5);
    const Eigen::MatrixXd dense = Eigen::MatrixXd(R.entries);
    const int c = 2 * 5 + 2;  // centre cell
    CHECK(dense(c, c) == doctest::Approx(20.0));
    for (int off : {-1, 1, -5, 5}) CHECK(dense(c, c + off) == doctest::Approx(-8.0));
    for (int off : {-6, -4, 4, 6}) CHECK(dense(c, c + off) == doctest::Approx(2.0));
    CHECK(dense(c, c - 10) == doctest::Approx(1.0));
    CHECK(dense(c, c + 10) == doctest::Approx(1.0));
    CHECK(dense(c, c - 2) == doctest::Approx(1.0));
    CHECK(dense(c, c + 2) == doctest::Approx(1.0));
    CHECK(dense.row(c).sum() == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("structure matrix equals the dense Laplacian product") {
    for (auto [nr, nc] : {std::pair{4, 4}, std::pair{3, 6}, std::pair{5, 3}}) {
        const StructureMatrix R = build_rw2d(nr, nc);
        const Eigen::MatrixXd dense = Eigen::MatrixXd(R.entries);
        const Eigen::MatrixXd oracle = testsup::dense_rw2d(nr, nc);
        CHECK((dense - oracle).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((dense - dense.transpose()).cwiseAbs().maxCoeff() == 0.0);
    }
}

TEST_CASE("the constant vector is in the null space") {
    const StructureMatrix R = build_rw2d(5, 7);
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(R.n);
    CHECK((R.entries * ones).cwiseAbs().maxCoeff() < 1e-12);
    REQUIRE(R.constraints.size() == 1);
    CHECK(R.constraints[0].size() == R.n);
}

TEST_CASE("trend constraints add the two coordinate trends") {
    const StructureMatrix R = build_rw2d(4, 5, true);
    CHECK(R.constraints.size() == 3);
}

TEST_CASE("lattices below 3x3 are rejected") {
    CHECK_THROWS_AS(build_rw2d(2, 5), InputError);
    CHECK_THROWS_AS(build_rw2d(5, 2), InputError);
}

TEST_CASE("structure matrices are positive semidefinite") {
    for (auto [nr, nc] : {std::pair{3, 3}, std::pair{4, 6}, std::pair{12, 12}}) {
        const StructureMatrix R = build_rw2d(nr, nc);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(R.entries));
        CHECK(eig.eigenvalues().minCoeff() > -1e-8 * eig.eigenvalues().maxCoeff());
    }
}

TEST_CASE("quadratic form equals the sum of squared Laplacians") {
    const int nr = 6, nc = 5;
    const StructureMatrix R = build_rw2d(nr, nc);
    Rng rng(9);
    Eigen::VectorXd u(R.n);
    for (int i = 0; i < R.n; ++i) u(i) = rng.normal();
    double lap_sq = 0.0;
    for (int r = 0; r < nr; ++r) {
        for (int c = 0; c < nc; ++c) {
            double lap = 0.0;
            int deg = 0;
            const int dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
            for (int k = 0; k < 4; ++k) {
                const int rr = r + dr[k], cc = c + dc[k];
                if (rr < 0 || rr >= nr || cc < 0 || cc >= nc) continue;
                lap -= u(rr * nc + cc);
                ++deg;
            }
            lap += deg * u(r * nc + c);
            lap_sq += lap * lap;
        }
    }
    CHECK(u.dot(R.entries * u) == doctest::Approx(lap_sq).epsilon(1e-10));
}

TEST_CASE("exact generalized variance matches the dense spectral form") {
    const StructureMatrix R = build_rw2d(6, 6);
    const GvResult gv = generalized_variance(R, GvMethod::exact);
    const Eigen::VectorXd oracle = testsup::dense_ginv_diag(testsup::dense_rw2d(6, 6));
    REQUIRE(gv.ginv_diag.size() == oracle.size());
    CHECK((gv.ginv_diag - oracle).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(gv.gv == doctest::Approx(testsup::geometric_mean(oracle)).epsilon(1e-10));
    CHECK(gv.rank_deficiency == 1);
}

TEST_CASE("reference generalized variances and their resolution ratio") {
    const GvResult g16 = generalized_variance(build_rw2d(16, 16), GvMethod::exact);
    const GvResult g32 = generalized_variance(build_rw2d(32, 32), GvMethod::exact);
    CHECK(g16.gv == doctest::Approx(5.907908164840425).epsilon(1e-9));
    CHECK(g32.gv == doctest::Approx(23.3436758865622).epsilon(1e-9));
    // doubling the resolution multiplies the variance by about k^2 = 4
    const double ratio = g32.gv / g16.gv;
    CHECK(ratio > 3.4);
    CHECK(ratio < 4.6);
}

TEST_CASE("scaling yields unit generalized variance and is idempotent") {
    const StructureMatrix R = build_rw2d(16, 16);
    const ScaledPrecision prec = scale_to_unit_gv(R, GvMethod::exact);
    CHECK(prec.scale_factor == doctest::Approx(prec.gv_before).epsilon(1e-14));
    CHECK(prec.gv_before == doctest::Approx(5.907908164840425).epsilon(1e-9));
    CHECK(testsup::geometric_mean(prec.ginv_diag) == doctest::Approx(1.0).epsilon(1e-8));

    StructureMatrix S2 = R;
    S2.entries = prec.scaled;
    const ScaledPrecision again = scale_to_unit_gv(S2, GvMethod::exact);
    CHECK(again.scale_factor == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("torus spectrum closed form") {
    const Eigen::VectorXd s = torus_spectrum(4, 4);
    REQUIRE(s.size() == 16);
    CHECK(s(0) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(s(2 * 4 + 2) == doctest::Approx(64.0).epsilon(1e-12));
    int zeros = 0;
    for (int i = 0; i < s.size(); ++i)
        if (s(i) < 1e-12) ++zeros;
    CHECK(zeros == 1);
}

TEST_CASE("torus spectrum has the reflection symmetry") {
    const int nr = 5, nc = 4;
    const Eigen::VectorXd s = torus_spectrum(nr, nc);
    for (int i = 0; i < nr; ++i)
        for (int j = 0; j < nc; ++j) {
            const int mirror = ((nr - i) % nr) * nc + (nc - j) % nc;
            CHECK(s(i * nc + j) == doctest::Approx(s(mirror)).epsilon(1e-12));
        }
}

TEST_CASE("embedded torus spectrum covers the doubled lattice") {
    const Eigen::VectorXd s = embedded_torus_spectrum(5, 7, 2);
    CHECK(s.size() == 10 * 14);
    int zeros = 0;
    for (int i = 0; i < s.size(); ++i)
        if (s(i) < 1e-12) ++zeros;
    CHECK(zeros == 1);
}

TEST_CASE("torus method yields constant marginal variances") {
    const StructureMatrix R = build_rw2d(8, 8);
    const GvResult gv = generalized_variance(R, GvMethod::torus);
    CHECK(gv.method_used == GvMethod::torus);
    CHECK(gv.ginv_diag.maxCoeff() - gv.ginv_diag.minCoeff() < 1e-12);
    CHECK(gv.gv == doctest::Approx(gv.ginv_diag(0)).epsilon(1e-12));
}

TEST_CASE("torus approximation sits below the exact open-boundary variance") {
    // the factor-2 embedding underestimates the free-boundary variance;
    // on a 20x20 lattice the shortfall is close to a third and stays well
    // inside [5%, 45%]
    const StructureMatrix R = build_rw2d(20, 20);
    const double exact = generalized_variance(R, GvMethod::exact).gv;
    const double torus = generalized_variance(R, GvMethod::torus).gv;
    const double gap = std::abs(torus - exact) / exact;
    CHECK(torus < exact);
    CHECK(gap > 0.05);
    CHECK(gap < 0.45);
}

TEST_CASE("auto selection falls back to the torus above the dense limit") {
    const StructureMatrix R = build_rw2d(10, 10);
    const GvResult gv = generalized_variance(R, GvMethod::auto_select, 50);
    CHECK(gv.method_used == GvMethod::torus);
    CHECK_THROWS_AS(generalized_variance(R, GvMethod::exact, 50), InputError);
    const GvResult small = generalized_variance(R, GvMethod::auto_select, 6000);
    CHECK(small.method_used == GvMethod::exact);
}

TEST_CASE("scale diagnostics serialize the key fields") {
    const ScaledPrecision prec = scale_to_unit_gv(build_rw2d(6, 6), GvMethod::exact);
    const nlohmann::json j = nlohmann::json::parse(scale_diagnostic_json(prec));
    CHECK(j.at("nrow").get<int>() == 6);
    CHECK(j.at("ncol").get<int>() == 6);
    CHECK(j.at("scale_factor").get<double>() == doctest::Approx(prec.scale_factor));
    CHECK(j.at("gv_before").get<double>() == doctest::Approx(prec.gv_before));
    CHECK(j.at("rank_deficiency").get<int>() == 1);
    CHECK(j.at("method").get<std::string>() == "exact");
}

TEST_CASE("spectral basis is retained only on request") {
    const StructureMatrix R = build_rw2d(5, 5);
    const ScaledPrecision bare = scale_to_unit_gv(R, GvMethod::exact, 6000, false);
    CHECK(bare.basis == nullptr);
    const ScaledPrecision kept = scale_to_unit_gv(R, GvMethod::exact, 6000, true);
    REQUIRE(kept.basis != nullptr);
    CHECK(kept.basis->rows() == 25);
    CHECK(kept.base_spectrum.size() > 0);
}
