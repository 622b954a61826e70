#include <catch2/catch_amalgamated.hpp>

#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "roshi/random.hpp"
#include "roshi/skeleton.hpp"

using namespace roshi;

namespace {

PoseFrame random_pose(const SkeletonModel& skel, Rng& rng, double max_angle = 0.8) {
    PoseFrame p = rest_pose(skel);
    p.root_orientation = random_rotation(rng);
    p.root_position = rng.gaussian3(0.5);
    for (auto& r : p.joint_rotations) r = random_rotation_within(rng, max_angle);
    return p;
}

}  // namespace

TEST_CASE("default skeleton shape") {
    const SkeletonModel skel = default_skeleton();
    REQUIRE(skel.joint_count() == 22);
    REQUIRE(skel.joints()[0].parent == -1);
    REQUIRE(skel.joints()[0].name == "pelvis");
    for (const char* bone : kTrackedBones) REQUIRE(skel.has_bone(bone));

    // Leg length fixed in the shipped model: |thigh| + |shank| = 0.85 m.
    const double leg = skel.joints()[skel.bone("left_thigh").distal].offset.norm() +
                       skel.joints()[skel.bone("left_shank").distal].offset.norm();
    REQUIRE(leg == Catch::Approx(0.85).margin(1e-12));

    REQUIRE_THROWS_AS(skel.bone("no_such_bone"), std::invalid_argument);
    REQUIRE_THROWS_AS(skel.joint_index("no_such_joint"), std::invalid_argument);
}

TEST_CASE("fk identity pose accumulates rest offsets") {
    const SkeletonModel skel = default_skeleton();
    const FkResult fk = forward_kinematics(skel, rest_pose(skel));
    for (std::size_t j = 0; j < skel.joint_count(); ++j) {
        Eigen::Vector3d expected = Eigen::Vector3d::Zero();
        for (int a = static_cast<int>(j); a >= 0; a = skel.joints()[a].parent) {
            expected += skel.joints()[a].offset;
        }
        REQUIRE((fk.joint_positions[j] - expected).norm() < 1e-12);
        REQUIRE(geodesic_distance(fk.joint_orientations[j], Rotation::identity()) < 1e-12);
    }
}

TEST_CASE("fk rigid-motion equivariance") {
    const SkeletonModel skel = default_skeleton();
    Rng rng(5);
    const PoseFrame pose = random_pose(skel, rng);
    const FkResult base = forward_kinematics(skel, pose);

    const Rotation q = random_rotation(rng);
    const Eigen::Vector3d t = rng.gaussian3(1.0);
    PoseFrame moved = pose;
    moved.root_orientation = q * pose.root_orientation;
    moved.root_position = q * pose.root_position + t;
    const FkResult transformed = forward_kinematics(skel, moved);

    for (std::size_t j = 0; j < skel.joint_count(); ++j) {
        REQUIRE((transformed.joint_positions[j] - (q * base.joint_positions[j] + t)).norm() < 1e-9);
        REQUIRE(geodesic_distance(transformed.joint_orientations[j], q * base.joint_orientations[j]) <
                1e-9);
    }

    // Pairwise joint distances are independent of the root pose.
    for (std::size_t a = 0; a < skel.joint_count(); a += 3) {
        for (std::size_t b = a + 1; b < skel.joint_count(); b += 3) {
            const double d0 = (base.joint_positions[a] - base.joint_positions[b]).norm();
            const double d1 = (transformed.joint_positions[a] - transformed.joint_positions[b]).norm();
            REQUIRE(d0 == Catch::Approx(d1).margin(1e-9));
        }
    }

    // Rz(90) on the root rotates every joint position about the origin.
    PoseFrame spun = pose;
    spun.root_position = Eigen::Vector3d::Zero();
    const FkResult at_origin = forward_kinematics(skel, spun);
    spun.root_orientation = Rotation::rot_z(std::numbers::pi / 2) * pose.root_orientation;
    const FkResult rotated = forward_kinematics(skel, spun);
    for (std::size_t j = 0; j < skel.joint_count(); ++j) {
        REQUIRE((rotated.joint_positions[j] -
                 Rotation::rot_z(std::numbers::pi / 2) * at_origin.joint_positions[j])
                    .norm() < 1e-9);
    }
}

TEST_CASE("skeletons missing tracked bones are rejected") {
    std::vector<Joint> joints = {
        {"a", -1, {0, 0, 0}},
        {"b", 0, {0, 0.3, 0}},
        {"c", 1, {0, 0.25, 0}},
        {"d", 2, {0, 0.2, 0}},
    };
    REQUIRE_THROWS_AS(SkeletonModel("chain", joints, {}), SchemaError);
}

TEST_CASE("fk matches the matrix-chain oracle") {
    Rng rng(9);
    const SkeletonModel skel = default_skeleton();
    // The pelvis-hip-knee-ankle path is the 4-joint chain case; the loop
    // below covers it and every other chain in the tree.
    const std::vector<int> leg_chain = {0, skel.joint_index("left_hip"),
                                        skel.joint_index("left_knee"),
                                        skel.joint_index("left_ankle")};
    for (int trial = 0; trial < 20; ++trial) {
        const PoseFrame pose = random_pose(skel, rng);
        const FkResult fk = forward_kinematics(skel, pose);
        const oracles::MatrixFk oracle = oracles::matrix_chain_fk(skel, pose);
        for (int j : leg_chain) {
            REQUIRE((fk.joint_positions[j] - oracle.position[j]).norm() < 1e-9);
        }
        for (std::size_t j = 0; j < skel.joint_count(); ++j) {
            REQUIRE((fk.joint_positions[j] - oracle.position[j]).norm() < 1e-9);
            REQUIRE((fk.joint_orientations[j].matrix() - oracle.orientation[j]).cwiseAbs().maxCoeff() <
                    1e-9);
        }
    }
}

TEST_CASE("bone world orientation") {
    const SkeletonModel skel = default_skeleton();
    Rng rng(13);

    // Identity pose: the rest orientation itself.
    const PoseFrame rest = rest_pose(skel);
    for (const char* name : kTrackedBones) {
        REQUIRE(geodesic_distance(bone_world_orientation(skel, rest, name), skel.bone(name).rest) <
                1e-12);
    }

    // Pelvis bone under a root-only rotation Q: Q * rest.
    PoseFrame root_only = rest;
    const Rotation q = random_rotation(rng);
    root_only.root_orientation = q;
    REQUIRE(geodesic_distance(bone_world_orientation(skel, root_only, "pelvis"),
                              q * skel.bone("pelvis").rest) < 1e-12);

    // Forearm under an elbow-only rotation matches the oracle chain.
    PoseFrame elbow_only = rest;
    const int elbow = skel.joint_index("left_elbow");
    elbow_only.joint_rotations[elbow - 1] = random_rotation_within(rng, 1.0);
    const oracles::MatrixFk oracle = oracles::matrix_chain_fk(skel, elbow_only);
    const Bone& fa = skel.bone("left_forearm");
    const Eigen::Matrix3d expected = oracle.orientation[fa.proximal] * fa.rest.matrix();
    REQUIRE((bone_world_orientation(skel, elbow_only, "left_forearm").matrix() - expected)
                .cwiseAbs()
                .maxCoeff() < 1e-9);
}

TEST_CASE("relative rotation") {
    const SkeletonModel skel = default_skeleton();
    Rng rng(17);
    const PoseFrame pose = random_pose(skel, rng);

    REQUIRE(geodesic_distance(relative_rotation(skel, pose, "pelvis", "pelvis"),
                              Rotation::identity()) < 1e-12);

    // Invariant to a world rotation of the whole pose.
    PoseFrame rotated = pose;
    const Rotation q = random_rotation(rng);
    rotated.root_orientation = q * pose.root_orientation;
    REQUIRE(geodesic_distance(relative_rotation(skel, pose, "pelvis", "left_upper_arm"),
                              relative_rotation(skel, rotated, "pelvis", "left_upper_arm")) < 1e-9);

    // Against the oracle product.
    const oracles::MatrixFk oracle = oracles::matrix_chain_fk(skel, pose);
    const Bone& p = skel.bone("pelvis");
    const Bone& s = skel.bone("left_shoulder");
    const Eigen::Matrix3d expected = (oracle.orientation[p.proximal] * p.rest.matrix()).transpose() *
                                     (oracle.orientation[s.proximal] * s.rest.matrix());
    REQUIRE((relative_rotation(skel, pose, "pelvis", "left_shoulder").matrix() - expected)
                .cwiseAbs()
                .maxCoeff() < 1e-9);

    // relative(a, b) = relative(b, a)^-1.
    REQUIRE(geodesic_distance(relative_rotation(skel, pose, "left_thigh", "right_shank"),
                              relative_rotation(skel, pose, "right_shank", "left_thigh").inverse()) <
            1e-9);
}

TEST_CASE("skeleton model file round trip") {
    const SkeletonModel skel = default_skeleton();
    std::stringstream buffer;
    skel.save(buffer);
    const SkeletonModel loaded = SkeletonModel::load(buffer);
    REQUIRE(loaded.name() == skel.name());
    REQUIRE(loaded.joint_count() == skel.joint_count());
    for (std::size_t j = 0; j < skel.joint_count(); ++j) {
        REQUIRE(loaded.joints()[j].name == skel.joints()[j].name);
        REQUIRE(loaded.joints()[j].parent == skel.joints()[j].parent);
        REQUIRE(loaded.joints()[j].offset == skel.joints()[j].offset);
    }
    for (const Bone& b : skel.bones()) {
        REQUIRE(geodesic_distance(loaded.bone(b.name).rest, b.rest) < 1e-15);
    }
}

TEST_CASE("skeleton model file errors") {
    std::stringstream wrong_version("roshi-skeleton v9\nend\n");
    REQUIRE_THROWS_AS(SkeletonModel::load(wrong_version), VersionError);

    std::stringstream missing_end("roshi-skeleton v1\nname x\njoints 0\nbones 0\n");
    REQUIRE_THROWS_AS(SkeletonModel::load(missing_end), SchemaError);

    const SkeletonModel skel = default_skeleton();
    PoseFrame bad = rest_pose(skel);
    bad.joint_rotations.pop_back();
    REQUIRE_THROWS_AS(forward_kinematics(skel, bad), std::invalid_argument);
}
