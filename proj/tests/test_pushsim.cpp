// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "../src/pushsim/pushsim.hpp"

using namespace wmmon;
using namespace wmmon::pushsim;
namespace fs = std::filesystem;

namespace {

SimState state_with(Vec2 agent, Vec2 block, double angle = 0.0) {
    SimState s;
    s.agent_pos = agent;
    s.block_pos = block;
    s.block_angle = angle;
    return s;
}

double dist(const Vec2& a, const Vec2& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

} // namespace

TEST_CASE("step: no contact and zero action changes only the step counter") {
    EnvParams env;
    SimState s = state_with({0.9, 0.9}, {0.3, 0.3}, 0.7);
    SimState n = step(s, {0.0, 0.0}, env);
    CHECK(n.agent_pos == s.agent_pos);
    CHECK(n.block_pos == s.block_pos);
    CHECK(n.block_angle == s.block_angle);
    CHECK(n.step == s.step + 1);
}

TEST_CASE("step: friction extremes") {
    EnvParams env;
    SUBCASE("friction 1 zeroes block velocity every step") {
        env.friction = 1.0;
        SimState s = state_with({0.9, 0.9}, {0.3, 0.3});
        s.block_vel = {0.05, -0.02};
        s.block_omega = 0.3;
        SimState n = step(s, {0.0, 0.0}, env);
        CHECK(n.block_vel[0] == 0.0);
        CHECK(n.block_vel[1] == 0.0);
        CHECK(n.block_omega == 0.0);
        CHECK(n.block_pos == s.block_pos);
    }
    SUBCASE("friction 0 drifts at constant velocity") {
        env.friction = 0.0;
        SimState s = state_with({0.95, 0.95}, {0.3, 0.3});
        s.block_vel = {0.01, 0.005};
        SimState n = s;
        for (int i = 0; i < 10; ++i) n = step(n, {0.0, 0.0}, env);
        CHECK(n.block_vel[0] == doctest::Approx(0.01));
        CHECK(n.block_vel[1] == doctest::Approx(0.005));
        CHECK(n.block_pos[0] == doctest::Approx(0.3 + 10 * 0.01));
    }
    SUBCASE("non-finite action is rejected") {
        SimState s;
        CHECK_THROWS_AS(step(s, {std::nan(""), 0.0}, env), Error);
    }
}

TEST_CASE("friction monotonicity over a single push episode") {
    // fixed action sequence: drive into the block, then stop and let it coast
    EnvParams env;
    std::vector<Vec2> actions;
    for (int i = 0; i < 12; ++i) actions.push_back({0.03, 0.0});
    for (int i = 0; i < 30; ++i) actions.push_back({0.0, 0.0});

    double prev_displacement = -1.0;
    for (double mu : {1.0, 0.8, 0.6, 0.4, 0.2, 0.0}) {
        EnvParams e = env;
        e.friction = mu;
        SimState s = state_with({0.22, 0.5}, {0.5, 0.5}, M_PI / 2);
        const Vec2 start = s.block_pos;
        double total = 0.0;
        Vec2 last = s.block_pos;
        for (const Vec2& a : actions) {
            s = step(s, a, e);
            total += dist(s.block_pos, last);
            last = s.block_pos;
        }
        (void)start;
        CHECK(total >= prev_displacement);
        prev_displacement = total;
    }
}

TEST_CASE("render: determinism, occupancy and value range") {
    EnvParams env;
    SimState s = state_with({0.62, 0.35}, {0.45, 0.55}, 0.4);

    SUBCASE("identical states give byte-identical images") {
        const auto a = render(s, env);
        const auto b = render(s, env);
        CHECK(a.data == b.data);
    }
    SUBCASE("all values in [0,1]") {
        const auto img = render(s, env);
        for (float v : img.data) {
            CHECK(v >= 0.0f);
            CHECK(v <= 1.0f);
        }
    }
    SUBCASE("block and goal off canvas leaves only the agent") {
        SimState empty = state_with({0.5, 0.5}, {5.0, 5.0});
        empty.goal_pos = {5.0, 5.0};
        const auto img = render(empty, env);
        const int S = env.image_size;
        for (int i = 0; i < S; ++i)
            for (int j = 0; j < S; ++j) {
                const float* px = img.data.data() + (size_t(i) * S + j) * 3;
                const bool white = px[0] == 1.0f && px[1] == 1.0f && px[2] == 1.0f;
                const bool agent = px[0] == float(env.agent_color[0]) &&
                                   px[1] == float(env.agent_color[1]) &&
                                   px[2] == float(env.agent_color[2]);
                CHECK((white || agent));
            }
    }
    SUBCASE("recolor changes only block-occupied pixels") {
        const auto base = render(s, env);
        const auto orange = render(s, apply_disturbance(env, Mode::RecolorOrange));
        const int S = env.image_size;
        for (int i = 0; i < S; ++i)
            for (int j = 0; j < S; ++j) {
                const Vec2 p{(j + 0.5) / S, (i + 0.5) / S};
                const size_t off = (size_t(i) * S + j) * 3;
                const bool occupied = point_in_block(p, s.block_pos, s.block_angle) &&
                                      dist(p, s.agent_pos) > 0.05;
                const bool differs = base.data[off] != orange.data[off] ||
                                     base.data[off + 1] != orange.data[off + 1] ||
                                     base.data[off + 2] != orange.data[off + 2];
                if (differs) CHECK(occupied);
            }
    }
}

TEST_CASE("scripted_policy contract") {
    EnvParams env;
    env.noise_amplitude = 0.0;
    nnkit::Rng rng(1);

    SUBCASE("zero action once the block is within tolerance") {
        SimState s = state_with({0.2, 0.2}, {0.69, 0.71});
        s.goal_pos = {0.70, 0.70};
        const Vec2 a = scripted_policy(s, env, rng);
        CHECK(a[0] == 0.0);
        CHECK(a[1] == 0.0);
    }
    SUBCASE("far from the push point with clear line of sight, the action points at it") {
        SimState s = state_with({0.15, 0.15}, {0.5, 0.5});
        s.goal_pos = {0.75, 0.75};
        // push point sits 0.25 behind the block centroid, between agent and block
        const Vec2 a = scripted_policy(s, env, rng);
        const double dir_to_pp[2] = {0.5 - 0.25 / std::sqrt(2.0) - 0.15,
                                     0.5 - 0.25 / std::sqrt(2.0) - 0.15};
        const double na = std::hypot(a[0], a[1]);
        const double np = std::hypot(dir_to_pp[0], dir_to_pp[1]);
        const double cos_sim = (a[0] * dir_to_pp[0] + a[1] * dir_to_pp[1]) / (na * np);
        CHECK(cos_sim > 0.99);
    }
    SUBCASE("fixed seed gives an identical action sequence") {
        auto run = [&]() {
            nnkit::Rng r(77);
            EnvParams e; // default noise
            SimState s = init_state(5, e);
            std::vector<double> seq;
            for (int i = 0; i < 40; ++i) {
                const Vec2 a = scripted_policy(s, e, r);
                seq.push_back(a[0]);
                seq.push_back(a[1]);
                s = step(s, a, e);
            }
            return seq;
        };
        CHECK(run() == run());
    }
}

TEST_CASE("rollout determinism and labels") {
    EnvParams env;
    const auto a = rollout(123, Mode::None, env);
    const auto b = rollout(123, Mode::None, env);
    REQUIRE(a.states.size() == b.states.size());
    for (size_t i = 0; i < a.states.size(); ++i) {
        CHECK(a.states[i].image.data == b.states[i].image.data);
        CHECK(a.states[i].proprio == b.states[i].proprio);
        CHECK(a.actions[i].delta == b.actions[i].delta);
    }
    CHECK(a.label == trajkit::Label::Nominal);
    const auto f = rollout(123, Mode::HalfFriction, env);
    CHECK(f.label == trajkit::Label::Failure);
    CHECK(f.mode == trajkit::Mode::HalfFriction);
    trajkit::validate(a);
    trajkit::validate(f);
}

TEST_CASE("recolor leaves proprio and action streams untouched") {
    EnvParams env;
    const auto nom = rollout(55, Mode::None, env);
    const auto rec = rollout(55, Mode::RecolorOrange, env);
    REQUIRE(nom.states.size() == rec.states.size());
    // the scripted policy closes the loop on simulator state, not pixels, so
    // the streams agree at every timestep; the spec only requires t = 0
    CHECK(nom.states[0].proprio == rec.states[0].proprio);
    CHECK(nom.actions[0].delta == rec.actions[0].delta);
    bool pixels_differ = false;
    for (size_t t = 0; t < nom.states.size() && !pixels_differ; ++t)
        pixels_differ = nom.states[t].image.data != rec.states[t].image.data;
    CHECK(pixels_differ);
}

TEST_CASE("controller sweep: nominal success and zero-friction divergence over 200 seeds") {
    EnvParams env;
    int successes = 0;
    std::vector<double> nominal_final;
    for (uint64_t seed = 1000; seed < 1200; ++seed) {
        const auto t = rollout(seed, Mode::None, env);
        // reconstruct final block distance from the last rendered state is
        // expensive; rerun the sim headlessly instead
        nnkit::Rng prng(nnkit::mix_seed(seed, 0x706f6c69ULL));
        SimState s = init_state(seed, env);
        int steps = 1;
        while (!at_goal(s, env) && steps < env.max_steps) {
            s = step(s, scripted_policy(s, env, prng), env);
            ++steps;
        }
        if (at_goal(s, env)) ++successes;
        nominal_final.push_back(block_goal_distance(s));
        CHECK(int(t.states.size()) <= env.max_steps);
    }
    CHECK(successes >= 190); // >= 95%

    std::vector<double> sorted = nominal_final;
    std::sort(sorted.begin(), sorted.end());
    const double nominal_median = sorted[sorted.size() / 2];

    int worse = 0;
    const int n_zero = 100;
    for (uint64_t seed = 1000; seed < 1000 + n_zero; ++seed) {
        const EnvParams zf = apply_disturbance(env, Mode::ZeroFriction);
        nnkit::Rng prng(nnkit::mix_seed(seed, 0x706f6c69ULL));
        SimState s = init_state(seed, zf);
        int steps = 1;
        while (!at_goal(s, zf) && steps < zf.max_steps) {
            s = step(s, scripted_policy(s, zf, prng), zf);
            ++steps;
        }
        if (block_goal_distance(s) > nominal_median) ++worse;
    }
    CHECK(worse >= n_zero * 9 / 10);
}

TEST_CASE("gen_dataset cardinality, determinism and seeds") {
    DatasetConfig cfg;
    cfg.base_seed = 77;
    cfg.counts = {4, 2, 2, 2, 1};
    cfg.env.max_steps = 40; // keep the test fast
    const fs::path dir = fs::temp_directory_path() / "wm_gen_test";
    fs::remove_all(dir);
    const auto m = gen_dataset(cfg, dir);
    CHECK(m.train.entries.size() == 4);
    CHECK(m.val.entries.size() == 2);
    CHECK(m.calib.entries.size() == 2);
    CHECK(m.eval_nominal.entries.size() == 2);
    CHECK(m.eval_failure.entries.size() == 4); // 1 per mode

    // seeds disjoint and sequential across splits
    std::vector<int64_t> seeds;
    for (const auto* mm : {&m.train, &m.val, &m.calib, &m.eval_nominal, &m.eval_failure})
        for (const auto& e : mm->entries) seeds.push_back(e.seed);
    for (size_t i = 0; i < seeds.size(); ++i) CHECK(seeds[i] == 77 + int64_t(i));

    // each failure mode appears once
    std::vector<trajkit::Mode> modes;
    for (const auto& e : m.eval_failure.entries) modes.push_back(e.mode);
    CHECK(std::count(modes.begin(), modes.end(), trajkit::Mode::RecolorOrange) == 1);
    CHECK(std::count(modes.begin(), modes.end(), trajkit::Mode::ZeroFriction) == 1);

    SUBCASE("zero counts give five empty archives") {
        DatasetConfig z = cfg;
        z.counts = {0, 0, 0, 0, 0};
        const fs::path zdir = fs::temp_directory_path() / "wm_gen_zero";
        fs::remove_all(zdir);
        const auto zm = gen_dataset(z, zdir);
        CHECK(zm.train.entries.empty());
        CHECK(zm.eval_failure.entries.empty());
        CHECK(trajkit::read_archive(zdir / kTrainDir).empty());
    }
    SUBCASE("regeneration with the same base seed is byte-identical") {
        const fs::path dir2 = fs::temp_directory_path() / "wm_gen_test2";
        fs::remove_all(dir2);
        gen_dataset(cfg, dir2);
        for (const char* split : {kTrainDir, kValDir, kCalibDir, kEvalNominalDir, kEvalFailureDir}) {
            for (const auto& entry : fs::directory_iterator(dir / split)) {
                const auto rel = entry.path().filename();
                std::ifstream f1(entry.path(), std::ios::binary);
                std::ifstream f2(dir2 / split / rel, std::ios::binary);
                REQUIRE(f2.good());
                const std::string b1((std::istreambuf_iterator<char>(f1)), {});
                const std::string b2((std::istreambuf_iterator<char>(f2)), {});
                CHECK(b1 == b2);
            }
        }
    }
}
