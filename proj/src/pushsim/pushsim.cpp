// SPDX-License-Identifier: Apache-2.0
#include "pushsim.hpp"

#include <cmath>
#include <fstream>

namespace wmmon::pushsim {

namespace {

// T-shape rectangles in the block frame: {center, half-extents}
struct Rect {
    Vec2 c, h;
};
constexpr Rect kBar{{0.0, 0.06}, {0.15, 0.04}};
constexpr Rect kStem{{0.0, -0.08}, {0.04, 0.10}};
constexpr double kAgentRadius = 0.05;
constexpr double kBlockBoundRadius = 0.19; // circumscribing radius used by the controller
constexpr double kInvInertia = 8.0;

double dot(const Vec2& a, const Vec2& b) { return a[0] * b[0] + a[1] * b[1]; }
double cross(const Vec2& a, const Vec2& b) { return a[0] * b[1] - a[1] * b[0]; }
double norm(const Vec2& a) { return std::sqrt(dot(a, a)); }
Vec2 sub2(const Vec2& a, const Vec2& b) { return {a[0] - b[0], a[1] - b[1]}; }
Vec2 add2(const Vec2& a, const Vec2& b) { return {a[0] + b[0], a[1] + b[1]}; }
Vec2 mul2(const Vec2& a, double s) { return {a[0] * s, a[1] * s}; }

Vec2 rotate(const Vec2& v, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * v[0] - s * v[1], s * v[0] + c * v[1]};
}

Vec2 clamp_norm(const Vec2& v, double maxlen) {
    const double n = norm(v);
    if (n <= maxlen || n == 0.0) return v;
    return mul2(v, maxlen / n);
}

Vec2 clamp_workspace(const Vec2& v) {
    return {std::min(1.0, std::max(0.0, v[0])), std::min(1.0, std::max(0.0, v[1]))};
}

double wrap_angle(double a) {
    while (a < -M_PI) a += 2.0 * M_PI;
    while (a > M_PI) a -= 2.0 * M_PI;
    return a;
}

bool point_in_rect(const Vec2& local, const Rect& r) {
    return std::abs(local[0] - r.c[0]) <= r.h[0] && std::abs(local[1] - r.c[1]) <= r.h[1];
}

struct Contact {
    bool hit = false;
    double depth = 0.0;
    Vec2 push_dir{0.0, 0.0}; // unit vector pushing the block away from the agent (block frame)
    Vec2 point{0.0, 0.0};    // contact point (block frame)
};

Contact disc_rect_contact(const Vec2& local, double radius, const Rect& r) {
    Contact c;
    const Vec2 rel = sub2(local, r.c);
    if (point_in_rect(local, r)) {
        // center inside: exit along the axis of least overlap
        const double ox = r.h[0] - std::abs(rel[0]);
        const double oy = r.h[1] - std::abs(rel[1]);
        c.hit = true;
        if (ox < oy) {
            const double s = rel[0] >= 0.0 ? 1.0 : -1.0;
            c.push_dir = {-s, 0.0};
            c.depth = radius + ox;
        } else {
            const double s = rel[1] >= 0.0 ? 1.0 : -1.0;
            c.push_dir = {0.0, -s};
            c.depth = radius + oy;
        }
        c.point = local;
        return c;
    }
    const Vec2 closest{r.c[0] + std::min(r.h[0], std::max(-r.h[0], rel[0])),
                       r.c[1] + std::min(r.h[1], std::max(-r.h[1], rel[1]))};
    const Vec2 delta = sub2(local, closest);
    const double dist = norm(delta);
    if (dist >= radius || dist == 0.0) return c;
    c.hit = true;
    c.depth = radius - dist;
    c.push_dir = mul2(delta, -1.0 / dist);
    c.point = closest;
    return c;
}

} // namespace

bool point_in_block(const Vec2& p, const Vec2& pose_pos, double pose_angle) {
    const Vec2 local = rotate(sub2(p, pose_pos), -pose_angle);
    return point_in_rect(local, kBar) || point_in_rect(local, kStem);
}

double block_goal_distance(const SimState& s) { return norm(sub2(s.goal_pos, s.block_pos)); }

bool at_goal(const SimState& s, const EnvParams& params) {
    return block_goal_distance(s) <= params.goal_tolerance;
}

EnvParams apply_disturbance(const EnvParams& params, Mode mode) {
    EnvParams out = params;
    switch (mode) {
        case Mode::None: break;
        case Mode::RecolorOrange: out.block_color = {1.0, 0.5, 0.0}; break;
        case Mode::RecolorGreen: out.block_color = {0.0, 1.0, 0.0}; break;
        case Mode::HalfFriction: out.friction = params.friction / 2.0; break;
        case Mode::ZeroFriction: out.friction = 0.0; break;
    }
    return out;
}

SimState step(const SimState& s, const Vec2& action, const EnvParams& params) {
    if (!std::isfinite(action[0]) || !std::isfinite(action[1]))
        throw_invalid("step: non-finite action");
    if (params.friction < 0.0 || params.friction > 1.0)
        throw_invalid("step: friction outside [0,1]");
    SimState n = s;
    const Vec2 a = clamp_norm(action, params.action_max);
    n.agent_pos = clamp_workspace(add2(s.agent_pos, a));

    const Vec2 local = rotate(sub2(n.agent_pos, s.block_pos), -s.block_angle);
    Contact best = disc_rect_contact(local, kAgentRadius, kBar);
    const Contact stem = disc_rect_contact(local, kAgentRadius, kStem);
    if (stem.hit && (!best.hit || stem.depth > best.depth)) best = stem;

    if (best.hit) {
        // impulse direction blends the face normal with the agent-to-centroid
        // line: face contact deflects the push, but a trapped block can still
        // be herded in any direction; torque comes from the contact point
        const double ln = norm(local);
        const Vec2 center_dir = ln > 1e-9 ? mul2(local, -1.0 / ln) : best.push_dir;
        Vec2 mix = add2(mul2(best.push_dir, 0.5), mul2(center_dir, 0.5));
        const double mn = norm(mix);
        mix = mn > 1e-9 ? mul2(mix, 1.0 / mn) : best.push_dir;
        const Vec2 push_world = rotate(mul2(mix, best.depth), s.block_angle);
        const Vec2 r_world = rotate(best.point, s.block_angle); // contact point relative to centroid
        n.block_vel = add2(n.block_vel, mul2(push_world, params.push_gain));
        n.block_omega += params.push_gain * cross(r_world, push_world) * kInvInertia;
    }

    const double retention = 1.0 - params.friction;
    n.block_vel = mul2(n.block_vel, retention);
    n.block_omega *= retention;

    n.block_pos = clamp_workspace(add2(n.block_pos, n.block_vel));
    n.block_angle = wrap_angle(n.block_angle + n.block_omega);
    n.step = s.step + 1;
    return n;
}

nnkit::Tensor render(const SimState& s, const EnvParams& params) {
    const int S = params.image_size;
    nnkit::Tensor img = nnkit::Tensor::zeros({S, S, 3});
    for (int i = 0; i < S; ++i) {
        for (int j = 0; j < S; ++j) {
            const Vec2 p{(j + 0.5) / S, (i + 0.5) / S};
            std::array<double, 3> color{1.0, 1.0, 1.0};
            if (point_in_block(p, s.goal_pos, s.goal_angle)) color = params.goal_color;
            if (point_in_block(p, s.block_pos, s.block_angle)) color = params.block_color;
            if (norm(sub2(p, s.agent_pos)) <= kAgentRadius) color = params.agent_color;
            float* px = img.data.data() + (size_t(i) * S + j) * 3;
            px[0] = float(color[0]);
            px[1] = float(color[1]);
            px[2] = float(color[2]);
        }
    }
    return img;
}

Vec2 scripted_policy(const SimState& s, const EnvParams& params, nnkit::Rng& rng) {
    const Vec2 to_goal = sub2(s.goal_pos, s.block_pos);
    const double dg = norm(to_goal);
    if (dg <= params.goal_tolerance) return {0.0, 0.0};

    const Vec2 dir = mul2(to_goal, 1.0 / dg);
    const double dg_axis = dg;

    const double push_offset = kBlockBoundRadius + kAgentRadius + 0.01;
    const Vec2 push_point = sub2(s.block_pos, mul2(dir, push_offset));

    const Vec2 rel = sub2(s.agent_pos, s.block_pos);
    const double r = norm(rel);
    const double behind = r > 1e-9 ? dot(rel, mul2(dir, -1.0)) / r : 1.0;

    // The controller's internal model assumes the nominal velocity retention
    // of one half, under which a free block glides one more |v| in total.
    // A block moving faster than the agent can be caught is left alone.
    const double glide_est = dot(s.block_vel, dir);
    if (glide_est >= 0.8 * dg_axis || norm(s.block_vel) > 1.0 * params.action_max) {
        Vec2 act = mul2(dir, -0.5 * params.action_max);
        if (params.noise_amplitude > 0.0) {
            act[0] += rng.uniform(-params.noise_amplitude, params.noise_amplitude);
            act[1] += rng.uniform(-params.noise_amplitude, params.noise_amplitude);
            act = clamp_norm(act, params.action_max);
        }
        return act;
    }

    double speed = params.action_max;
    Vec2 target;
    if (behind > 0.85 && r < push_offset + 0.10) {
        // lined up behind the block: drive through its centroid toward the
        // goal, easing off as the block closes in
        target = add2(s.block_pos, mul2(dir, 0.05));
        speed *= std::min(1.0, std::max(0.5, dg / 0.25));
    } else {
        const Vec2 to_pp = sub2(push_point, s.agent_pos);
        const double seg_len = norm(to_pp);
        bool blocked = false;
        if (seg_len > 1e-9) {
            const Vec2 seg_dir = mul2(to_pp, 1.0 / seg_len);
            const double along = std::min(seg_len, std::max(0.0, dot(mul2(rel, -1.0), seg_dir)));
            const Vec2 closest = add2(s.agent_pos, mul2(seg_dir, along));
            blocked = norm(sub2(closest, s.block_pos)) < kBlockBoundRadius + kAgentRadius + 0.03;
        }
        if (blocked) {
            // circle the block toward the push point's bearing
            const double theta_a = std::atan2(rel[1], rel[0]);
            const double theta_p = std::atan2(push_point[1] - s.block_pos[1],
                                              push_point[0] - s.block_pos[0]);
            const double diff = wrap_angle(theta_p - theta_a);
            const double theta = theta_a + (diff >= 0.0 ? 1.0 : -1.0) * 0.4;
            const double orbit_r = std::max(r, push_offset + 0.05);
            target = add2(s.block_pos, {orbit_r * std::cos(theta), orbit_r * std::sin(theta)});
        } else {
            target = clamp_workspace(push_point);
        }
    }

    Vec2 act = clamp_norm(sub2(target, s.agent_pos), speed);
    if (params.noise_amplitude > 0.0) {
        act[0] += rng.uniform(-params.noise_amplitude, params.noise_amplitude);
        act[1] += rng.uniform(-params.noise_amplitude, params.noise_amplitude);
        act = clamp_norm(act, params.action_max);
    }
    return act;
}

SimState init_state(uint64_t seed, const EnvParams& params) {
    nnkit::Rng rng(nnkit::mix_seed(seed, 0x70757368ULL));
    SimState s;
    s.goal_pos = params.goal_pos;
    s.goal_angle = params.goal_angle;
    s.block_pos = {rng.uniform(0.22, 0.52), rng.uniform(0.22, 0.52)};
    s.block_angle = rng.uniform(-M_PI, M_PI);
    for (int attempt = 0; attempt < 100; ++attempt) {
        s.agent_pos = {rng.uniform(0.08, 0.92), rng.uniform(0.08, 0.92)};
        if (norm(sub2(s.agent_pos, s.block_pos)) > kBlockBoundRadius + kAgentRadius + 0.02) break;
    }
    return s;
}

trajkit::Trajectory rollout(uint64_t seed, Mode mode, const EnvParams& base_params) {
    const EnvParams params = apply_disturbance(base_params, mode);
    nnkit::Rng policy_rng(nnkit::mix_seed(seed, 0x706f6c69ULL));
    SimState sim = init_state(seed, params);

    trajkit::Trajectory traj;
    traj.seed = int64_t(seed);
    traj.mode = mode;
    traj.label = mode == Mode::None ? trajkit::Label::Nominal : trajkit::Label::Failure;
    traj.id = "seed" + std::to_string(seed);

    while (true) {
        const Vec2 act = scripted_policy(sim, params, policy_rng);
        trajkit::State st;
        st.t = int(traj.states.size());
        st.image = render(sim, params);
        st.proprio = {float(sim.agent_pos[0]), float(sim.agent_pos[1])};
        traj.states.push_back(std::move(st));
        traj.actions.push_back({{float(act[0]), float(act[1])}});
        const bool long_enough = int(traj.states.size()) >= params.min_steps;
        if ((at_goal(sim, params) && long_enough) || int(traj.states.size()) >= params.max_steps)
            break;
        sim = step(sim, act, params);
    }
    return traj;
}

json EnvParams::to_json() const {
    json j;
    j["friction"] = friction;
    j["push_gain"] = push_gain;
    j["block_color"] = block_color;
    j["agent_color"] = agent_color;
    j["goal_color"] = goal_color;
    j["max_steps"] = max_steps;
    j["min_steps"] = min_steps;
    j["goal_tolerance"] = goal_tolerance;
    j["action_max"] = action_max;
    j["noise_amplitude"] = noise_amplitude;
    j["goal_pos"] = goal_pos;
    j["goal_angle"] = goal_angle;
    j["image_size"] = image_size;
    return j;
}

EnvParams EnvParams::from_json(const json& j) {
    EnvParams p;
    p.friction = j.value("friction", p.friction);
    p.push_gain = j.value("push_gain", p.push_gain);
    p.block_color = j.value("block_color", p.block_color);
    p.agent_color = j.value("agent_color", p.agent_color);
    p.goal_color = j.value("goal_color", p.goal_color);
    p.max_steps = j.value("max_steps", p.max_steps);
    p.min_steps = j.value("min_steps", p.min_steps);
    p.goal_tolerance = j.value("goal_tolerance", p.goal_tolerance);
    p.action_max = j.value("action_max", p.action_max);
    p.noise_amplitude = j.value("noise_amplitude", p.noise_amplitude);
    p.goal_pos = j.value("goal_pos", p.goal_pos);
    p.goal_angle = j.value("goal_angle", p.goal_angle);
    p.image_size = j.value("image_size", p.image_size);
    if (p.friction < 0.0 || p.friction > 1.0) throw_invalid("env: friction outside [0,1]");
    if (p.image_size < 8) throw_invalid("env: image_size too small");
    return p;
}

DatasetConfig DatasetConfig::from_json(const json& j) {
    DatasetConfig c;
    c.base_seed = j.value("base_seed", c.base_seed);
    if (j.contains("counts")) {
        const json& jc = j["counts"];
        c.counts.train = jc.value("train", c.counts.train);
        c.counts.val = jc.value("val", c.counts.val);
        c.counts.calib = jc.value("calib", c.counts.calib);
        c.counts.eval_nominal = jc.value("eval_nominal", c.counts.eval_nominal);
        c.counts.eval_per_mode = jc.value("eval_per_mode", c.counts.eval_per_mode);
    }
    if (c.counts.train < 0 || c.counts.val < 0 || c.counts.calib < 0 ||
        c.counts.eval_nominal < 0 || c.counts.eval_per_mode < 0)
        throw_invalid("dataset config: negative counts");
    if (j.contains("env")) c.env = EnvParams::from_json(j["env"]);
    return c;
}

json DatasetConfig::to_json() const {
    json j;
    j["base_seed"] = base_seed;
    j["counts"] = {{"train", counts.train},
                   {"val", counts.val},
                   {"calib", counts.calib},
                   {"eval_nominal", counts.eval_nominal},
                   {"eval_per_mode", counts.eval_per_mode}};
    j["env"] = env.to_json();
    return j;
}

DatasetManifests gen_dataset(const DatasetConfig& config, const std::filesystem::path& out) {
    const std::array<Mode, 4> failure_modes{Mode::RecolorOrange, Mode::RecolorGreen,
                                            Mode::HalfFriction, Mode::ZeroFriction};
    int64_t global_index = 0;
    auto make_split = [&](const char* tag, int count, Mode mode) {
        std::vector<trajkit::Trajectory> trajs;
        trajs.reserve(size_t(count));
        for (int i = 0; i < count; ++i) {
            const uint64_t seed = uint64_t(config.base_seed + global_index);
            trajkit::Trajectory t = rollout(seed, mode, config.env);
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%05lld", (long long)global_index);
            t.id = std::string(tag) + "-" + buf;
            trajs.push_back(std::move(t));
            ++global_index;
        }
        return trajs;
    };

    const json env = config.env.to_json();
    DatasetManifests m;
    m.train = trajkit::write_archive(make_split("train", config.counts.train, Mode::None),
                                     out / kTrainDir, env);
    m.val = trajkit::write_archive(make_split("val", config.counts.val, Mode::None),
                                   out / kValDir, env);
    m.calib = trajkit::write_archive(make_split("calib", config.counts.calib, Mode::None),
                                     out / kCalibDir, env);
    m.eval_nominal = trajkit::write_archive(
        make_split("evalnom", config.counts.eval_nominal, Mode::None), out / kEvalNominalDir, env);

    std::vector<trajkit::Trajectory> failures;
    for (Mode mode : failure_modes) {
        auto part = make_split("evalfail", config.counts.eval_per_mode, mode);
        for (auto& t : part) failures.push_back(std::move(t));
    }
    m.eval_failure = trajkit::write_archive(failures, out / kEvalFailureDir, env);

    std::ofstream cf(out / "dataset_config.json", std::ios::trunc);
    if (!cf) throw_io("cannot write dataset_config.json in " + out.string());
    cf << config.to_json().dump(2) << "\n";
    return m;
}

} // namespace wmmon::pushsim
