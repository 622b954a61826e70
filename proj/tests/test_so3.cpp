#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include "oracles.hpp"
#include "roshi/random.hpp"
#include "roshi/so3.hpp"

using namespace roshi;

namespace {
constexpr double kPi = std::numbers::pi;
}

TEST_CASE("rotation representation invariants") {
    Rng rng(101);
    for (int i = 0; i < 200; ++i) {
        const Rotation r = random_rotation(rng);
        const Eigen::Matrix3d m = r.matrix();
        REQUIRE(((m * m.transpose()) - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
        REQUIRE(std::abs(m.determinant() - 1.0) < 1e-9);
        REQUIRE(std::abs(r.quaternion().norm() - 1.0) < 1e-9);
    }

    // q and -q denote the same rotation and compare equal.
    const Rotation a = Rotation::from_quaternion(0.3, -0.4, 0.5, 0.2);
    const Rotation b = Rotation::from_quaternion(-0.3, 0.4, -0.5, -0.2);
    REQUIRE(geodesic_distance(a, b) == 0.0);
    REQUIRE(a.quaternion().coeffs() == b.quaternion().coeffs());
}

TEST_CASE("compose") {
    Rng rng(7);
    const Rotation r = random_rotation(rng);
    REQUIRE(geodesic_distance(Rotation::identity() * r, r) < 1e-12);
    REQUIRE(geodesic_distance(r * r.inverse(), Rotation::identity()) < 1e-12);
    REQUIRE(geodesic_distance(compose(Rotation::rot_z(deg_to_rad(30)), Rotation::rot_z(deg_to_rad(60))),
                              Rotation::rot_z(deg_to_rad(90))) < 1e-12);
}

TEST_CASE("log and exp") {
    REQUIRE(Rotation::identity().log().norm() == 0.0);
    const Eigen::Vector3d lz = Rotation::rot_z(kPi / 2).log();
    REQUIRE((lz - Eigen::Vector3d(0, 0, kPi / 2)).norm() < 1e-12);

    const Eigen::Vector3d v(0.1, 0.2, 0.3);
    REQUIRE((Rotation::exp(v).log() - v).norm() < 1e-9);

    // Principal branch: angle in [0, pi]; near-pi flagged as ambiguous.
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const Rotation r = random_rotation(rng);
        REQUIRE(r.log().norm() <= kPi + 1e-12);
    }
    const auto near_pi = log_checked(Rotation::rot_x(kPi - 1e-9));
    REQUIRE(near_pi.branch_ambiguous);
    const auto away = log_checked(Rotation::rot_x(2.0));
    REQUIRE(!away.branch_ambiguous);
}

TEST_CASE("exp/log round trip across the angle range") {
    Rng rng(11);
    for (int i = 0; i < 500; ++i) {
        Eigen::Vector3d dir = rng.gaussian3(1.0).normalized();
        const double angle = rng.uniform(0.0, kPi - 1e-3);
        const Eigen::Vector3d v = angle * dir;
        REQUIRE(geodesic_distance(Rotation::exp(Rotation::exp(v).log()), Rotation::exp(v)) < 1e-9);
    }
}

TEST_CASE("geodesic distance") {
    Rng rng(13);
    const Rotation r = random_rotation(rng);
    REQUIRE(geodesic_distance(r, r) == 0.0);
    REQUIRE(std::abs(geodesic_distance(Rotation::identity(), Rotation::rot_z(kPi / 2)) - kPi / 2) < 1e-12);

    // Independent quaternion-angle oracle.
    const Rotation x45 = Rotation::rot_x(kPi / 4);
    const Rotation y45 = Rotation::rot_y(kPi / 4);
    REQUIRE(std::abs(geodesic_distance(x45, y45) - oracles::quat_angle(x45, y45)) < 1e-12);
    for (int i = 0; i < 300; ++i) {
        const Rotation a = random_rotation(rng);
        const Rotation b = random_rotation(rng);
        REQUIRE(std::abs(geodesic_distance(a, b) - oracles::quat_angle(a, b)) < 1e-9);
        REQUIRE(geodesic_distance(a, b) == geodesic_distance(b, a));
        REQUIRE(geodesic_distance(a, b) <= kPi + 1e-12);
    }

    // Triangle inequality on random triples.
    for (int i = 0; i < 300; ++i) {
        const Rotation a = random_rotation(rng);
        const Rotation b = random_rotation(rng);
        const Rotation c = random_rotation(rng);
        REQUIRE(geodesic_distance(a, c) <=
                geodesic_distance(a, b) + geodesic_distance(b, c) + 1e-9);
    }
}

TEST_CASE("karcher mean basics") {
    const std::vector<Rotation> same = {Rotation::identity(), Rotation::identity(),
                                        Rotation::identity()};
    REQUIRE(geodesic_distance(karcher_mean(same).mean, Rotation::identity()) < 1e-12);

    const std::vector<Rotation> pair = {Rotation::rot_z(deg_to_rad(10)),
                                        Rotation::rot_z(deg_to_rad(-10))};
    REQUIRE(geodesic_distance(karcher_mean(pair).mean, Rotation::identity()) < 1e-9);

    // A single sample is returned exactly.
    Rng rng(17);
    const Rotation lone = random_rotation(rng);
    const std::vector<Rotation> one = {lone};
    REQUIRE(karcher_mean(one).mean.quaternion().coeffs() == lone.quaternion().coeffs());

    REQUIRE_THROWS_AS(karcher_mean(std::vector<Rotation>{}), std::invalid_argument);
    KarcherOptions bad;
    bad.weights = {1.0, 2.0};
    REQUIRE_THROWS_AS(karcher_mean(one, bad), std::invalid_argument);
}

TEST_CASE("karcher mean matches grid-then-refine oracle") {
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        const Rotation base = random_rotation(rng);
        std::vector<Rotation> samples;
        for (int j = 0; j < 5; ++j) {
            samples.push_back(base * random_rotation_within(rng, deg_to_rad(30)));
        }
        const Rotation lib = karcher_mean(samples).mean;
        const Rotation oracle = oracles::karcher_oracle(samples, {}, 0.7, 0.07);
        REQUIRE(geodesic_distance(lib, oracle) < 1e-6);
    }
}

TEST_CASE("karcher mean is left-equivariant") {
    Rng rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        const Rotation base = random_rotation(rng);
        std::vector<Rotation> samples, rotated;
        const Rotation q = random_rotation(rng);
        for (int j = 0; j < 6; ++j) {
            const Rotation s = base * random_rotation_within(rng, deg_to_rad(30));
            samples.push_back(s);
            rotated.push_back(q * s);
        }
        REQUIRE(geodesic_distance(q * karcher_mean(samples).mean, karcher_mean(rotated).mean) <
                1e-8);
    }
}

TEST_CASE("karcher gradient matches central finite differences") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        const Rotation base = random_rotation(rng);
        std::vector<Rotation> samples;
        for (int j = 0; j < 5; ++j) {
            samples.push_back(base * random_rotation_within(rng, deg_to_rad(40)));
        }
        const Rotation at = base * random_rotation_within(rng, deg_to_rad(20));
        const Eigen::Vector3d grad = karcher_objective_gradient(at, samples);
        const double h = 1e-6;
        Eigen::Vector3d fd;
        for (int axis = 0; axis < 3; ++axis) {
            Eigen::Vector3d e = Eigen::Vector3d::Zero();
            e[axis] = h;
            double plus = 0, minus = 0;
            for (const Rotation& s : samples) {
                plus += std::pow(geodesic_distance(at * Rotation::exp(e), s), 2);
                minus += std::pow(geodesic_distance(at * Rotation::exp(-e), s), 2);
            }
            fd[axis] = (plus - minus) / (2 * h);
        }
        REQUIRE((grad - fd).norm() <= 1e-5 * std::max(1.0, fd.norm()));
    }
}

TEST_CASE("karcher trim pass drops outliers") {
    Rng rng(37);
    const Rotation truth = random_rotation(rng);
    std::vector<Rotation> samples;
    for (int j = 0; j < 40; ++j) {
        samples.push_back(truth * random_rotation_within(rng, deg_to_rad(3)));
    }
    for (int j = 0; j < 8; ++j) {
        samples.push_back(truth * random_rotation_within(rng, 1.0) *
                          Rotation::rot_x(deg_to_rad(40)));
    }
    KarcherOptions trimmed;
    trimmed.trim_threshold_rad = deg_to_rad(15);
    const KarcherResult with_trim = karcher_mean(samples, trimmed);
    const KarcherResult without = karcher_mean(samples);
    REQUIRE(with_trim.diagnostics.trimmed_count > 0);
    REQUIRE(geodesic_distance(with_trim.mean, truth) < geodesic_distance(without.mean, truth));
}

TEST_CASE("karcher non-convergence carries the best iterate") {
    Rng rng(41);
    std::vector<Rotation> samples;
    for (int j = 0; j < 4; ++j) samples.push_back(random_rotation_within(rng, 0.3));
    KarcherOptions opt;
    opt.max_iterations = 0;
    try {
        karcher_mean(samples, opt);
        FAIL("expected KarcherConvergenceError");
    } catch (const KarcherConvergenceError& e) {
        REQUIRE(e.gradient_norm >= 0.0);
        REQUIRE(e.best_iterate.quaternion().norm() > 0.9);
    }
}

TEST_CASE("yaw projection") {
    const Eigen::Vector3d z = Eigen::Vector3d::UnitZ();
    REQUIRE(geodesic_distance(yaw_project(Rotation::rot_z(deg_to_rad(40)), z).rotation,
                              Rotation::rot_z(deg_to_rad(40))) < 1e-12);
    REQUIRE(geodesic_distance(yaw_project(Rotation::rot_x(deg_to_rad(20)), z).rotation,
                              Rotation::identity()) < 1e-12);

    // Brute-force 1D scan oracle.
    const Rotation mixed = Rotation::rot_z(deg_to_rad(30)) * Rotation::rot_x(deg_to_rad(5));
    const auto projected = yaw_project(mixed, z);
    REQUIRE(!projected.ambiguous);
    const double oracle_angle = oracles::yaw_scan_oracle(mixed, z);
    REQUIRE(std::abs(projected.rotation.log().z() - oracle_angle) < 1e-6);

    // Result commutes with rotations about gravity.
    Rng rng(43);
    for (int i = 0; i < 50; ++i) {
        const Rotation r = random_rotation(rng);
        const Rotation p = yaw_project(r, z).rotation;
        const Rotation g = Rotation::rot_z(rng.uniform(-kPi, kPi));
        REQUIRE(geodesic_distance(p * g, g * p) < 1e-9);
    }

    // Pi rotation about an axis orthogonal to gravity is ambiguous.
    REQUIRE(yaw_project(Rotation::rot_x(kPi), z).ambiguous);
    REQUIRE(!yaw_project(Rotation::rot_x(kPi - 0.1), z).ambiguous);
}
