#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "roshi/errors.hpp"
#include "roshi/so3.hpp"

namespace roshi {

struct Joint {
    std::string name;
    int parent = -1;                                   // -1 for the root
    Eigen::Vector3d offset = Eigen::Vector3d::Zero();  // meters, in parent frame
};

/// A named segment spanning one tree edge. Its frame's Y axis points from
/// proximal to distal joint in the rest pose; `rest` maps bone frame to the
/// gravity-aligned world frame at rest.
struct Bone {
    std::string name;
    int proximal = 0;
    int distal = 0;
    Rotation rest;
};

/// The nine IMU-tracked segments, in canonical tracker-id order.
inline constexpr std::array<const char*, 9> kTrackedBones = {
    "pelvis",        "left_upper_arm", "right_upper_arm", "left_forearm", "right_forearm",
    "left_thigh",    "right_thigh",    "left_shank",      "right_shank"};

inline constexpr int kPelvisTracker = 0;

class SkeletonModel {
public:
    SkeletonModel() = default;

    SkeletonModel(std::string name, std::vector<Joint> joints, std::vector<Bone> bones)
        : name_(std::move(name)), joints_(std::move(joints)), bones_(std::move(bones)) {
        finalize();
    }

    const std::string& name() const { return name_; }
    std::size_t joint_count() const { return joints_.size(); }
    const std::vector<Joint>& joints() const { return joints_; }
    const std::vector<Bone>& bones() const { return bones_; }

    int joint_index(const std::string& name) const {
        auto it = joint_by_name_.find(name);
        if (it == joint_by_name_.end()) {
            throw std::invalid_argument("skeleton: unknown joint '" + name + "'");
        }
        return it->second;
    }

    const Bone& bone(const std::string& name) const {
        auto it = bone_by_name_.find(name);
        if (it == bone_by_name_.end()) {
            throw std::invalid_argument("skeleton: unknown bone '" + name + "'");
        }
        return bones_[it->second];
    }

    bool has_bone(const std::string& name) const { return bone_by_name_.count(name) > 0; }

    static SkeletonModel load(std::istream& in);
    static SkeletonModel load_file(const std::string& path);
    void save(std::ostream& out) const;
    void save_file(const std::string& path) const;

private:
    void finalize();

    std::string name_;
    std::vector<Joint> joints_;
    std::vector<Bone> bones_;
    std::map<std::string, int> joint_by_name_;
    std::map<std::string, int> bone_by_name_;
};

struct PoseFrame {
    std::int64_t timestamp_ms = 0;
    Rotation root_orientation;
    Eigen::Vector3d root_position = Eigen::Vector3d::Zero();
    /// Local rotation of joint j is joint_rotations[j - 1]; size = joints - 1.
    std::vector<Rotation> joint_rotations;
};

struct MotionSequence {
    std::string skeleton_name;
    double rate_hz = 0.0;
    std::vector<PoseFrame> frames;
};

inline PoseFrame rest_pose(const SkeletonModel& skeleton, std::int64_t timestamp_ms = 0) {
    PoseFrame p;
    p.timestamp_ms = timestamp_ms;
    p.joint_rotations.assign(skeleton.joint_count() - 1, Rotation::identity());
    return p;
}

struct FkResult {
    std::vector<Eigen::Vector3d> joint_positions;  // world, meters
    std::vector<Rotation> joint_orientations;      // accumulated chain per joint
};

inline FkResult forward_kinematics(const SkeletonModel& skeleton, const PoseFrame& pose) {
    const std::size_t n = skeleton.joint_count();
    if (pose.joint_rotations.size() + 1 != n) {
        throw std::invalid_argument("forward_kinematics: pose does not match skeleton");
    }
    FkResult out;
    out.joint_positions.resize(n);
    out.joint_orientations.resize(n);
    out.joint_positions[0] = pose.root_position;
    out.joint_orientations[0] = pose.root_orientation;
    for (std::size_t j = 1; j < n; ++j) {
        const Joint& joint = skeleton.joints()[j];
        const Rotation& parent_orient = out.joint_orientations[joint.parent];
        out.joint_positions[j] = out.joint_positions[joint.parent] + parent_orient * joint.offset;
        out.joint_orientations[j] = parent_orient * pose.joint_rotations[j - 1];
    }
    return out;
}

/// World orientation of a bone: the proximal joint's accumulated chain
/// composed with the bone's rest orientation.
inline Rotation bone_world_orientation(const SkeletonModel& skeleton, const FkResult& fk,
                                       const std::string& bone_name) {
    const Bone& b = skeleton.bone(bone_name);
    return fk.joint_orientations[b.proximal] * b.rest;
}

inline Rotation bone_world_orientation(const SkeletonModel& skeleton, const PoseFrame& pose,
                                       const std::string& bone_name) {
    return bone_world_orientation(skeleton, forward_kinematics(skeleton, pose), bone_name);
}

/// (orientation of a)^T (orientation of b); invariant to world rotations of
/// the whole pose.
inline Rotation relative_rotation(const SkeletonModel& skeleton, const PoseFrame& pose,
                                  const std::string& bone_a, const std::string& bone_b) {
    const FkResult fk = forward_kinematics(skeleton, pose);
    return bone_world_orientation(skeleton, fk, bone_a).inverse() *
           bone_world_orientation(skeleton, fk, bone_b);
}

inline void SkeletonModel::finalize() {
    if (joints_.empty()) throw SchemaError("skeleton: no joints");
    int roots = 0;
    for (std::size_t j = 0; j < joints_.size(); ++j) {
        const Joint& joint = joints_[j];
        if (joint.parent < 0) {
            ++roots;
            if (j != 0) throw SchemaError("skeleton: root must be joint 0");
        } else if (joint.parent >= static_cast<int>(j)) {
            throw SchemaError("skeleton: joints must be topologically sorted");
        }
        if (!joint.offset.allFinite()) throw SchemaError("skeleton: non-finite offset");
        if (!joint_by_name_.emplace(joint.name, static_cast<int>(j)).second) {
            throw SchemaError("skeleton: duplicate joint name '" + joint.name + "'");
        }
    }
    if (roots != 1) throw SchemaError("skeleton: expected exactly one root");

    // Rest orientations from the rest-pose bone direction (Y along the bone).
    for (std::size_t i = 0; i < bones_.size(); ++i) {
        Bone& b = bones_[i];
        if (b.proximal < 0 || b.distal <= 0 || b.distal >= static_cast<int>(joints_.size()) ||
            joints_[b.distal].parent != b.proximal) {
            throw SchemaError("skeleton: bone '" + b.name + "' is not a tree edge");
        }
        const Eigen::Vector3d dir = joints_[b.distal].offset;
        if (dir.norm() < 1e-9) throw SchemaError("skeleton: zero-length bone '" + b.name + "'");
        const Eigen::Vector3d y = dir.normalized();
        const Eigen::Vector3d helper =
            std::abs(y.z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
        const Eigen::Vector3d x = helper.cross(y).normalized();
        const Eigen::Vector3d z = x.cross(y);
        Eigen::Matrix3d m;
        m.col(0) = x;
        m.col(1) = y;
        m.col(2) = z;
        b.rest = Rotation::from_matrix(m);
        if (!bone_by_name_.emplace(b.name, static_cast<int>(i)).second) {
            throw SchemaError("skeleton: duplicate bone name '" + b.name + "'");
        }
    }
    for (const char* required : kTrackedBones) {
        if (!bone_by_name_.count(required)) {
            throw SchemaError(std::string("skeleton: missing tracked bone '") + required + "'");
        }
    }
}

/// The fixed-shape 22-joint humanoid shipped with the pipeline. Z is up,
/// X is the forward walking direction, rest pose is a T-pose.
inline SkeletonModel default_skeleton() {
    const auto v = [](double x, double y, double z) { return Eigen::Vector3d(x, y, z); };
    std::vector<Joint> joints = {
        {"pelvis", -1, v(0, 0, 0)},
        {"left_hip", 0, v(0, 0.09, -0.05)},
        {"right_hip", 0, v(0, -0.09, -0.05)},
        {"spine1", 0, v(0, 0, 0.11)},
        {"left_knee", 1, v(0, 0, -0.45)},
        {"right_knee", 2, v(0, 0, -0.45)},
        {"spine2", 3, v(0, 0, 0.12)},
        {"left_ankle", 4, v(0, 0, -0.40)},
        {"right_ankle", 5, v(0, 0, -0.40)},
        {"spine3", 6, v(0, 0, 0.12)},
        {"left_foot", 7, v(0.14, 0, -0.06)},
        {"right_foot", 8, v(0.14, 0, -0.06)},
        {"neck", 9, v(0, 0, 0.14)},
        {"left_collar", 9, v(0, 0.07, 0.06)},
        {"right_collar", 9, v(0, -0.07, 0.06)},
        {"head", 12, v(0, 0, 0.10)},
        {"left_shoulder", 13, v(0, 0.11, 0.02)},
        {"right_shoulder", 14, v(0, -0.11, 0.02)},
        {"left_elbow", 16, v(0, 0.26, 0)},
        {"right_elbow", 17, v(0, -0.26, 0)},
        {"left_wrist", 18, v(0, 0.25, 0)},
        {"right_wrist", 19, v(0, -0.25, 0)},
    };
    std::vector<Bone> bones = {
        {"pelvis", 0, 3},           {"left_thigh", 1, 4},      {"right_thigh", 2, 5},
        {"left_shank", 4, 7},       {"right_shank", 5, 8},     {"left_upper_arm", 16, 18},
        {"right_upper_arm", 17, 19}, {"left_forearm", 18, 20}, {"right_forearm", 19, 21},
        {"left_shoulder", 13, 16},  {"right_shoulder", 14, 17}, {"head", 12, 15},
        {"left_foot", 7, 10},       {"right_foot", 8, 11},
    };
    return SkeletonModel("default-22", std::move(joints), std::move(bones));
}

// --- Model file (versioned text document) -----------------------------------

inline void SkeletonModel::save(std::ostream& out) const {
    out << "roshi-skeleton v1\n";
    out << "name " << name_ << "\n";
    out << "joints " << joints_.size() << "\n";
    out.precision(17);
    for (std::size_t j = 0; j < joints_.size(); ++j) {
        const Joint& joint = joints_[j];
        out << "joint " << j << " " << joint.name << " " << joint.parent << " "
            << joint.offset.x() << " " << joint.offset.y() << " " << joint.offset.z() << "\n";
    }
    out << "bones " << bones_.size() << "\n";
    for (const Bone& b : bones_) {
        out << "bone " << b.name << " " << b.proximal << " " << b.distal << "\n";
    }
    out << "end\n";
}

inline void SkeletonModel::save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("skeleton: cannot write '" + path + "'");
    save(out);
}

inline SkeletonModel SkeletonModel::load(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw SchemaError("skeleton: empty document");
    if (line != "roshi-skeleton v1") throw VersionError("skeleton: unsupported header '" + line + "'");

    std::string name;
    std::vector<Joint> joints;
    std::vector<Bone> bones;
    std::size_t expected_joints = 0, expected_bones = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "name") {
            ls >> name;
        } else if (key == "joints") {
            ls >> expected_joints;
        } else if (key == "joint") {
            std::size_t idx;
            Joint j;
            ls >> idx >> j.name >> j.parent >> j.offset.x() >> j.offset.y() >> j.offset.z();
            if (!ls || idx != joints.size()) throw SchemaError("skeleton: bad joint line '" + line + "'");
            joints.push_back(std::move(j));
        } else if (key == "bones") {
            ls >> expected_bones;
        } else if (key == "bone") {
            Bone b;
            ls >> b.name >> b.proximal >> b.distal;
            if (!ls) throw SchemaError("skeleton: bad bone line '" + line + "'");
            bones.push_back(std::move(b));
        } else if (key == "end") {
            if (joints.size() != expected_joints || bones.size() != expected_bones) {
                throw SchemaError("skeleton: joint/bone count mismatch");
            }
            return SkeletonModel(std::move(name), std::move(joints), std::move(bones));
        } else {
            throw SchemaError("skeleton: unknown key '" + key + "'");
        }
    }
    throw SchemaError("skeleton: missing 'end'");
}

inline SkeletonModel SkeletonModel::load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("skeleton: cannot read '" + path + "'");
    return load(in);
}

}  // namespace roshi
