// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "../src/trajkit/trajkit.hpp"

using namespace wmmon;
using namespace wmmon::trajkit;
namespace fs = std::filesystem;

namespace {

Trajectory random_trajectory(uint64_t seed, int T, int img = 8, int p = 2, int d = 2) {
    nnkit::Rng rng(seed);
    Trajectory traj;
    traj.id = "rt" + std::to_string(seed);
    traj.seed = int64_t(seed);
    for (int t = 0; t < T; ++t) {
        State s;
        s.t = t;
        s.image = nnkit::Tensor::zeros({img, img, 3});
        for (float& v : s.image.data) v = float(rng.uniform());
        for (int i = 0; i < p; ++i) s.proprio.push_back(float(rng.uniform()));
        traj.states.push_back(std::move(s));
        Action a;
        for (int i = 0; i < d; ++i) a.delta.push_back(float(rng.uniform(-0.05, 0.05)));
        traj.actions.push_back(std::move(a));
    }
    return traj;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

bool equal_traj(const Trajectory& a, const Trajectory& b) {
    if (a.id != b.id || a.label != b.label || a.mode != b.mode || a.seed != b.seed) return false;
    if (a.states.size() != b.states.size()) return false;
    for (size_t i = 0; i < a.states.size(); ++i) {
        if (a.states[i].t != b.states[i].t) return false;
        if (a.states[i].image.shape != b.states[i].image.shape) return false;
        if (a.states[i].image.data != b.states[i].image.data) return false; // bitwise
        if (a.states[i].proprio != b.states[i].proprio) return false;
        if (a.actions[i].delta != b.actions[i].delta) return false;
    }
    return true;
}

} // namespace

TEST_CASE("write_archive basics") {
    SUBCASE("one trajectory of length 5 lists one entry of length 5") {
        const fs::path dir = fresh_dir("wm_arch_one");
        auto m = write_archive({random_trajectory(1, 5)}, dir);
        REQUIRE(m.entries.size() == 1);
        CHECK(m.entries[0].length == 5);
        CHECK(fs::exists(dir / m.entries[0].file));
    }
    SUBCASE("empty list gives empty manifest and no bin files") {
        const fs::path dir = fresh_dir("wm_arch_empty");
        auto m = write_archive({}, dir);
        CHECK(m.entries.empty());
        int bins = 0;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.path().extension() == ".bin") ++bins;
        CHECK(bins == 0);
        CHECK(read_archive(dir).empty());
    }
    SUBCASE("invariant violation names the trajectory") {
        const fs::path dir = fresh_dir("wm_arch_bad");
        Trajectory t = random_trajectory(2, 4);
        t.id = "offender";
        t.states[1].image.data[0] = 1.5f; // outside [0,1]
        try {
            write_archive({t}, dir);
            FAIL("expected validation error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("offender") != std::string::npos);
            CHECK(e.kind() == Error::Kind::Invalid);
        }
    }
}

TEST_CASE("archive round-trip is the identity on random trajectories") {
    const fs::path dir = fresh_dir("wm_arch_rt");
    std::vector<Trajectory> trajs;
    nnkit::Rng lens(42);
    for (int i = 0; i < 10; ++i) {
        Trajectory t = random_trajectory(100 + uint64_t(i), 3 + int(lens.uniform_int(12)));
        if (i % 3 == 1) {
            t.label = Label::Failure;
            t.mode = Mode::ZeroFriction;
        }
        trajs.push_back(std::move(t));
    }
    write_archive(trajs, dir);
    const auto loaded = read_archive(dir);
    REQUIRE(loaded.size() == trajs.size());
    for (size_t i = 0; i < trajs.size(); ++i) CHECK(equal_traj(trajs[i], loaded[i]));
}

TEST_CASE("read_archive error paths") {
    const fs::path dir = fresh_dir("wm_arch_err");
    write_archive({random_trajectory(7, 6)}, dir);

    SUBCASE("wrong magic is a format error") {
        const auto m = read_manifest(dir);
        std::fstream f(dir / m.entries[0].file,
                       std::ios::binary | std::ios::in | std::ios::out);
        f.write("XXXXXXXX", 8);
        f.close();
        CHECK_THROWS_WITH_AS(read_archive(dir),
                             doctest::Contains("bad magic"), Error);
    }
    SUBCASE("manifest referencing a missing file") {
        const auto m = read_manifest(dir);
        fs::remove(dir / m.entries[0].file);
        try {
            read_archive(dir);
            FAIL("expected io error");
        } catch (const Error& e) {
            CHECK(e.kind() == Error::Kind::Io);
        }
    }
    SUBCASE("truncated file reports the byte offset") {
        const auto m = read_manifest(dir);
        const fs::path p = dir / m.entries[0].file;
        const auto full = fs::file_size(p);
        fs::resize_file(p, full - 17);
        try {
            read_archive(dir);
            FAIL("expected corruption error");
        } catch (const Error& e) {
            CHECK(std::string(e.what()).find("byte offset") != std::string::npos);
            CHECK(std::string(e.what()).find(std::to_string(full - 17)) != std::string::npos);
        }
    }
}

TEST_CASE("slice_windows counts and contents") {
    SUBCASE("T=10, H=4 gives 6 pairs") {
        const Trajectory t = random_trajectory(11, 10);
        const auto w = slice_windows(t, 4);
        REQUIRE(w.size() == 6);
        // k-th target is states[H+k]
        for (size_t k = 0; k < w.size(); ++k) CHECK(w[k].second->t == int(4 + k));
    }
    SUBCASE("T=H+1 gives a single pair targeting the final state") {
        const Trajectory t = random_trajectory(12, 6);
        const auto w = slice_windows(t, 5);
        REQUIRE(w.size() == 1);
        CHECK(w[0].second->t == 5);
        CHECK(w[0].first.end_time() == 4);
    }
    SUBCASE("T=H gives an empty list") {
        const Trajectory t = random_trajectory(13, 6);
        CHECK(slice_windows(t, 6).empty());
    }
    SUBCASE("windows are contiguous, in-order slices (property over random cases)") {
        nnkit::Rng rng(99);
        for (int it = 0; it < 25; ++it) {
            const int T = 2 + int(rng.uniform_int(14));
            const int H = 1 + int(rng.uniform_int(9));
            const Trajectory t = random_trajectory(uint64_t(200 + it), T);
            const auto w = slice_windows(t, H);
            CHECK(int(w.size()) == std::max(0, T - H));
            for (const auto& [win, target] : w) {
                REQUIRE(win.length == H);
                for (int i = 0; i < H; ++i) CHECK(win.state(i).t == win.start + i);
                CHECK(target->t == win.end_time() + 1);
            }
        }
    }
}
