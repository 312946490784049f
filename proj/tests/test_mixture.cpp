#include "ddlab/mixture.hpp"
#include "ddlab/rng.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

using namespace ddlab;

TEST_CASE("signal-less spec construction") {
    const MixtureSpec spec = build_signalless_spec(800);
    CHECK(spec.modes() == 1);
    CHECK(spec.mu[0].norm() == 0.0);
    CHECK(spec.p[0] == 1.0);
    CHECK(spec.laws[0].values[0] == 0.0);
    CHECK(spec.chi(0, 0) == 0.0);

    const MixtureSpec tiny = build_signalless_spec(1);
    CHECK(tiny.d == 1);
    CHECK(tiny.mu[0].size() == 1);
}

TEST_CASE("signal-less rows have mean zero (Monte Carlo)") {
    const int n = 100000, d = 4;
    const Dataset data = sample_dataset(build_signalless_spec(d), n, 42);
    const double grand_mean = data.X.mean();
    CHECK(std::abs(grand_mean) <= 3.0 / std::sqrt(static_cast<double>(n) * d));
}

TEST_CASE("xor spec construction") {
    const MixtureSpec s2 = build_xor_spec(2, 1.0);
    CHECK(s2.mu[0].isApprox(Eigen::Vector2d(1, 1)));
    CHECK(s2.mu[2].isApprox(Eigen::Vector2d(-1, 1)));

    const MixtureSpec s = build_xor_spec(1000, 2.0);
    CHECK(s.mu[0].dot(s.mu[2]) == 0.0);

    CHECK_THROWS_AS(build_xor_spec(999, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(build_xor_spec(10, 0.0), std::invalid_argument);
}

TEST_CASE("chi of the xor spec is the lambda^2 block pattern") {
    const double lam = 4.0;
    const MixtureSpec spec = build_xor_spec(100, lam);
    Eigen::MatrixXd expected(4, 4);
    expected << 1, -1, 0, 0, -1, 1, 0, 0, 0, 0, 1, -1, 0, 0, -1, 1;
    expected *= lam * lam;
    CHECK((compute_chi(spec) - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("chi of a unit-norm spike") {
    const int d = 50;
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    mu[0] = std::sqrt(static_cast<double>(d));
    const MixtureSpec spec = MixtureSpec::create(d, {mu}, Eigen::VectorXd::Constant(1, 1.0),
                                                 {ResponseLaw::point_mass(0.0)});
    CHECK(spec.chi(0, 0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("chi is a Gram matrix: symmetric PSD for random signals") {
    Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        const int d = 20, J = 3;
        std::vector<Eigen::VectorXd> mu;
        for (int j = 0; j < J; ++j) {
            Eigen::VectorXd v(d);
            for (int i = 0; i < d; ++i) v[i] = rng.gaussian();
            mu.push_back(v);
        }
        const MixtureSpec spec =
            MixtureSpec::create(d, mu, Eigen::VectorXd::Constant(J, 1.0 / J),
                                {ResponseLaw::point_mass(0.0), ResponseLaw::point_mass(1.0),
                                 ResponseLaw::point_mass(0.5)});
        const Eigen::MatrixXd chi = compute_chi(spec);
        CHECK((chi - chi.transpose()).cwiseAbs().maxCoeff() == 0.0);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(chi);
        CHECK(eig.eigenvalues().minCoeff() >= -1e-12);
    }
}

TEST_CASE("sample_dataset shapes, labels and determinism") {
    const MixtureSpec spec = build_signalless_spec(800);
    const Dataset a = sample_dataset(spec, 200, 7);
    CHECK(a.X.rows() == 200);
    CHECK(a.X.cols() == 800);
    CHECK(a.y.cwiseAbs().maxCoeff() == 0.0);

    const Dataset b = sample_dataset(spec, 200, 7);
    CHECK(a.X == b.X);
    CHECK(a.y == b.y);
    CHECK(a.labels == b.labels);

    const Dataset one = sample_dataset(build_xor_spec(10, 1.0), 1, 3);
    CHECK(one.n() == 1);
    CHECK(one.labels[0] >= 0);
    CHECK(one.labels[0] < 4);
}

TEST_CASE("three-point noise has the Gaussian's first two moments") {
    const int n = 100000, d = 10;
    MixtureSpec spec = build_signalless_spec(d);
    spec.noise = NoiseKind::three_point;
    const Dataset disc = sample_dataset(spec, n, 11);
    for (int c = 0; c < d; ++c) {
        const double mean = disc.X.col(c).mean();
        const double var = disc.X.col(c).squaredNorm() / n - mean * mean;
        CHECK(std::abs(var - 1.0 / d) < 5e-3);
        CHECK(std::abs(mean) < 5e-3);
    }

    // Universality hook: both noise kinds share the first two moments.
    spec.noise = NoiseKind::gaussian;
    const Dataset gauss = sample_dataset(spec, n, 11);
    CHECK(std::abs(gauss.X.mean() - disc.X.mean()) < 1e-3);
    const double var_g = gauss.X.squaredNorm() / (static_cast<double>(n) * d);
    const double var_3 = disc.X.squaredNorm() / (static_cast<double>(n) * d);
    CHECK(std::abs(var_g - var_3) < 2e-3);
}

TEST_CASE("mode proportions concentrate (binomial bound per mode)") {
    const MixtureSpec spec = build_xor_spec(2, 1.0);
    const int n = 10000, seeds = 200;
    Eigen::Vector4i violations = Eigen::Vector4i::Zero();
    for (int s = 0; s < seeds; ++s) {
        const Dataset data = sample_dataset(spec, n, 1000 + static_cast<std::uint64_t>(s));
        Eigen::Vector4d counts = Eigen::Vector4d::Zero();
        for (int lab : data.labels) counts[lab] += 1.0;
        for (int j = 0; j < 4; ++j) {
            const double dev = std::abs(counts[j] / n - spec.p[j]);
            if (dev > 3.0 * std::sqrt(spec.p[j] / n)) violations[j] += 1;
        }
    }
    for (int j = 0; j < 4; ++j)
        CHECK(static_cast<double>(violations[j]) / seeds <= 0.01);
}

TEST_CASE("empirical overlaps") {
    const int d = 100, L = 2;
    const MixtureSpec spec = build_xor_spec(d, 1.0);

    SUBCASE("zero parameters give zero overlaps") {
        const Eigen::MatrixXd z = Eigen::MatrixXd::Zero(d, L);
        const OverlapRecord rec = empirical_overlaps(z, z, Eigen::MatrixXd::Zero(5, L), spec);
        CHECK(rec.omega.cwiseAbs().maxCoeff() == 0.0);
        CHECK(rec.xi.cwiseAbs().maxCoeff() == 0.0);
        CHECK(rec.sigma.cwiseAbs().maxCoeff() == 0.0);
        for (const auto& m : rec.m) CHECK(m.cwiseAbs().maxCoeff() == 0.0);
    }

    SUBCASE("law of large numbers for a standard normal theta") {
        const int big = 100000;
        const MixtureSpec big_spec = build_signalless_spec(big);
        Eigen::MatrixXd theta(big, 1);
        Rng rng(5);
        rng.fill_gaussian(theta);
        const OverlapRecord rec =
            empirical_overlaps(theta, theta, Eigen::MatrixXd::Zero(1, 1), big_spec);
        CHECK(std::abs(rec.omega(0, 0) - 1.0) < 0.02);
    }

    SUBCASE("theta = mu recovers chi") {
        Eigen::MatrixXd theta = spec.mu[0];
        const OverlapRecord rec =
            empirical_overlaps(theta, theta, Eigen::MatrixXd::Zero(1, 1), spec);
        CHECK(rec.m[0][0] == doctest::Approx(spec.chi(0, 0)).epsilon(1e-14));
    }

    SUBCASE("shape mismatch is rejected") {
        CHECK_THROWS_AS(empirical_overlaps(Eigen::MatrixXd::Zero(d, 2),
                                           Eigen::MatrixXd::Zero(d, 1),
                                           Eigen::MatrixXd::Zero(5, 2), spec),
                        std::invalid_argument);
    }
}

TEST_CASE("omega and sigma overlaps are PSD") {
    Rng rng(9);
    const int d = 60, L = 2, n = 30;
    const MixtureSpec spec = build_xor_spec(d, 1.0);
    Eigen::MatrixXd theta(d, L), hhat(n, L);
    rng.fill_gaussian(theta);
    rng.fill_gaussian(hhat);
    const OverlapRecord rec = empirical_overlaps(theta, theta, hhat, spec);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> om(rec.omega), sg(rec.sigma);
    CHECK(om.eigenvalues().minCoeff() >= -1e-12);
    CHECK(sg.eigenvalues().minCoeff() >= -1e-12);
}

TEST_CASE("spec config round trip") {
    MixtureSpec spec = build_xor_spec(6, 1.5);
    spec.noise = NoiseKind::three_point;
    const std::string text = spec_to_config(spec);
    const MixtureSpec back = spec_from_config(parse_config_text(text));
    CHECK(back.d == spec.d);
    CHECK(back.modes() == spec.modes());
    CHECK(back.noise == spec.noise);
    for (int j = 0; j < spec.modes(); ++j) {
        CHECK(back.mu[static_cast<std::size_t>(j)] == spec.mu[static_cast<std::size_t>(j)]);
        CHECK(back.laws[static_cast<std::size_t>(j)].values ==
              spec.laws[static_cast<std::size_t>(j)].values);
    }
    CHECK(back.p == spec.p);

    // Flipped-label two-point law survives the round trip too.
    MixtureSpec flip = MixtureSpec::create(
        4, {Eigen::VectorXd::Ones(4), -Eigen::VectorXd::Ones(4)},
        Eigen::VectorXd::Constant(2, 0.5),
        {ResponseLaw::two_point(-1.0, 0.9, 1.0), ResponseLaw::two_point(1.0, 0.9, -1.0)});
    const MixtureSpec flip_back = spec_from_config(parse_config_text(spec_to_config(flip)));
    CHECK(flip_back.laws[0].probs == flip.laws[0].probs);
}

TEST_CASE("dataset csv export") {
    const Dataset data = sample_dataset(build_xor_spec(4, 1.0), 3, 1);
    std::ostringstream out;
    write_dataset_csv(out, data);
    int lines = 0;
    for (char c : out.str())
        if (c == '\n') ++lines;
    CHECK(lines == 3);
}
