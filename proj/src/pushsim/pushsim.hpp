// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <filesystem>
#include <json.hpp>

#include "../trajkit/trajkit.hpp"

namespace wmmon::pushsim {

using json = nlohmann::ordered_json;
using trajkit::Mode;
using Vec2 = std::array<double, 2>;

struct EnvParams {
    double friction = 0.5; // per-step velocity retention multiplier is 1 - friction
    double push_gain = 1.3;
    std::array<double, 3> block_color{0.0, 0.0, 1.0};
    std::array<double, 3> agent_color{0.25, 0.25, 1.0};
    std::array<double, 3> goal_color{0.0, 1.0, 0.0};
    int max_steps = 130;
    int min_steps = 10; // rollouts record at least this many states
    double goal_tolerance = 0.08;
    double action_max = 0.04;
    double noise_amplitude = 0.006;
    Vec2 goal_pos{0.70, 0.70};
    double goal_angle = 0.0;
    int image_size = 32;

    json to_json() const;
    static EnvParams from_json(const json& j);
};

struct SimState {
    Vec2 agent_pos{0.5, 0.5};
    Vec2 block_pos{0.4, 0.4};
    double block_angle = 0.0;
    Vec2 block_vel{0.0, 0.0};
    double block_omega = 0.0;
    Vec2 goal_pos{0.70, 0.70};
    double goal_angle = 0.0;
    int step = 0;
};

// Applies a disturbance to the environment parameters (active from t = 0).
EnvParams apply_disturbance(const EnvParams& params, Mode mode);

// Block geometry: a T made of two axis-aligned rectangles in the block frame.
// Exposed for tests that reason about occupancy.
bool point_in_block(const Vec2& p, const Vec2& pose_pos, double pose_angle);

double block_goal_distance(const SimState& s);
bool at_goal(const SimState& s, const EnvParams& params);

// One deterministic physics step; the action is clamped to action_max.
SimState step(const SimState& s, const Vec2& action, const EnvParams& params);

// Deterministic rasterization: white background, goal T, block T, agent disc.
nnkit::Tensor render(const SimState& s, const EnvParams& params);

// Push-point chasing controller with optional seeded exploration noise.
Vec2 scripted_policy(const SimState& s, const EnvParams& params, nnkit::Rng& rng);

SimState init_state(uint64_t seed, const EnvParams& params);

trajkit::Trajectory rollout(uint64_t seed, Mode mode, const EnvParams& params);

struct DatasetCounts {
    int train = 256;
    int val = 32;
    int calib = 64;
    int eval_nominal = 64;
    int eval_per_mode = 32;
};

struct DatasetConfig {
    int64_t base_seed = 4242;
    DatasetCounts counts;
    EnvParams env;

    static DatasetConfig from_json(const json& j);
    json to_json() const;
};

struct DatasetManifests {
    trajkit::ArchiveManifest train, val, calib, eval_nominal, eval_failure;
};

// Split directory names under the dataset root.
inline const char* kTrainDir = "train-nominal";
inline const char* kValDir = "val-nominal";
inline const char* kCalibDir = "calib-nominal";
inline const char* kEvalNominalDir = "eval-nominal";
inline const char* kEvalFailureDir = "eval-failure";

DatasetManifests gen_dataset(const DatasetConfig& config, const std::filesystem::path& out);

} // namespace wmmon::pushsim
