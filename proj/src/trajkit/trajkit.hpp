// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <json.hpp>
#include <string>
#include <vector>

#include "../nnkit/tensor.hpp"

namespace wmmon::trajkit {

using json = nlohmann::ordered_json;
using nnkit::Tensor;

enum class Label { Nominal, Failure };

enum class Mode { None, RecolorOrange, RecolorGreen, HalfFriction, ZeroFriction };

const char* to_string(Label label);
const char* to_string(Mode mode);
Label label_from_string(const std::string& s);
Mode mode_from_string(const std::string& s);

// One observation: a single camera view plus the proprioceptive reading.
struct State {
    Tensor image;               // [H_img, W_img, C], values in [0,1]
    std::vector<float> proprio; // end-effector position
    int t = 0;
};

struct Action {
    std::vector<float> delta; // commanded end-effector position change
};

struct Trajectory {
    std::string id;
    std::vector<State> states;
    std::vector<Action> actions; // same length as states
    Label label = Label::Nominal;
    Mode mode = Mode::None;
    int64_t seed = 0;

    int length() const { return int(states.size()); }
};

// Throws on any invariant violation, naming the trajectory id.
void validate(const Trajectory& traj);

// View of H contiguous (state, action) pairs of a trajectory.
struct HistoryWindow {
    const Trajectory* traj = nullptr;
    int start = 0;
    int length = 0;

    const State& state(int i) const { return traj->states[size_t(start + i)]; }
    const Action& action(int i) const { return traj->actions[size_t(start + i)]; }
    int end_time() const { return start + length - 1; }
};

// All (window, next-state) training pairs; the k-th target is states[H+k].
// Returns an empty list when the trajectory is too short.
std::vector<std::pair<HistoryWindow, const State*>> slice_windows(const Trajectory& traj, int H);

struct ManifestEntry {
    std::string id;
    Label label = Label::Nominal;
    Mode mode = Mode::None;
    int64_t seed = 0;
    int length = 0;
    std::string file;
};

struct ArchiveManifest {
    int version = 1;
    json env = json::object();
    std::vector<ManifestEntry> entries;
};

ArchiveManifest write_archive(const std::vector<Trajectory>& trajectories,
                              const std::filesystem::path& dir,
                              const json& env = json::object());

ArchiveManifest read_manifest(const std::filesystem::path& dir);
Trajectory read_trajectory(const std::filesystem::path& dir, const ManifestEntry& entry);
std::vector<Trajectory> read_archive(const std::filesystem::path& dir);

} // namespace wmmon::trajkit
