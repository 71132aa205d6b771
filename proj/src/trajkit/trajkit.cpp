// SPDX-License-Identifier: Apache-2.0
#include "trajkit.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

namespace wmmon::trajkit {

const char* to_string(Label label) {
    return label == Label::Nominal ? "nominal" : "failure";
}

const char* to_string(Mode mode) {
    switch (mode) {
        case Mode::None: return "none";
        case Mode::RecolorOrange: return "recolor_orange";
        case Mode::RecolorGreen: return "recolor_green";
        case Mode::HalfFriction: return "half_friction";
        case Mode::ZeroFriction: return "zero_friction";
    }
    return "none";
}

Label label_from_string(const std::string& s) {
    if (s == "nominal") return Label::Nominal;
    if (s == "failure") return Label::Failure;
    throw_format("unknown label '" + s + "'");
}

Mode mode_from_string(const std::string& s) {
    if (s == "none") return Mode::None;
    if (s == "recolor_orange") return Mode::RecolorOrange;
    if (s == "recolor_green") return Mode::RecolorGreen;
    if (s == "half_friction") return Mode::HalfFriction;
    if (s == "zero_friction") return Mode::ZeroFriction;
    throw_format("unknown disturbance mode '" + s + "'");
}

void validate(const Trajectory& traj) {
    auto fail = [&traj](const std::string& why) {
        throw_invalid("trajectory '" + traj.id + "': " + why);
    };
    if (traj.states.empty()) fail("no states");
    if (traj.states.size() != traj.actions.size()) fail("state/action length mismatch");
    if ((traj.label == Label::Nominal) != (traj.mode == Mode::None))
        fail("label and disturbance mode disagree");
    const State& s0 = traj.states[0];
    if (s0.image.shape.size() != 3) fail("image is not rank 3");
    const size_t p = s0.proprio.size();
    const size_t d = traj.actions[0].delta.size();
    for (size_t i = 0; i < traj.states.size(); ++i) {
        const State& s = traj.states[i];
        if (s.t != int(i)) fail("timestep indices not consecutive from 0");
        if (s.image.shape != s0.image.shape) fail("inconsistent image shape");
        if (s.proprio.size() != p) fail("inconsistent proprio dimension");
        for (float v : s.image.data)
            if (!(v >= 0.0f && v <= 1.0f)) fail("image value outside [0,1]");
        for (float v : s.proprio)
            if (!std::isfinite(v)) fail("non-finite proprio");
        const Action& a = traj.actions[i];
        if (a.delta.size() != d) fail("inconsistent action dimension");
        for (float v : a.delta)
            if (!std::isfinite(v)) fail("non-finite action");
    }
}

std::vector<std::pair<HistoryWindow, const State*>> slice_windows(const Trajectory& traj, int H) {
    if (H < 1) throw_invalid("slice_windows: H must be >= 1");
    std::vector<std::pair<HistoryWindow, const State*>> out;
    const int T = traj.length();
    for (int k = 0; k + H < T; ++k)
        out.emplace_back(HistoryWindow{&traj, k, H}, &traj.states[size_t(k + H)]);
    return out;
}

namespace {

constexpr char kMagic[8] = {'W', 'M', 'T', 'R', 'A', 'J', '0', '1'};

void put_u32(std::string& out, uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

void put_f32s(std::string& out, const float* data, size_t n) {
    uint32_t u;
    for (size_t i = 0; i < n; ++i) {
        std::memcpy(&u, &data[i], 4);
        put_u32(out, u);
    }
}

} // namespace

ArchiveManifest write_archive(const std::vector<Trajectory>& trajectories,
                              const std::filesystem::path& dir, const json& env) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw_io("cannot create archive directory " + dir.string() + ": " + ec.message());

    ArchiveManifest manifest;
    manifest.env = env;
    for (const Trajectory& traj : trajectories) {
        validate(traj);
        const uint32_t T = uint32_t(traj.length());
        const uint32_t h = uint32_t(traj.states[0].image.shape[0]);
        const uint32_t w = uint32_t(traj.states[0].image.shape[1]);
        const uint32_t c = uint32_t(traj.states[0].image.shape[2]);
        const uint32_t p = uint32_t(traj.states[0].proprio.size());
        const uint32_t d = uint32_t(traj.actions[0].delta.size());

        std::string buf;
        buf.reserve(32 + size_t(T) * (size_t(h) * w * c + p + d) * 4);
        buf.append(kMagic, 8);
        put_u32(buf, T);
        put_u32(buf, h);
        put_u32(buf, w);
        put_u32(buf, c);
        put_u32(buf, p);
        put_u32(buf, d);
        for (const State& s : traj.states) put_f32s(buf, s.image.data.data(), s.image.data.size());
        for (const State& s : traj.states) put_f32s(buf, s.proprio.data(), s.proprio.size());
        for (const Action& a : traj.actions) put_f32s(buf, a.delta.data(), a.delta.size());

        const std::string fname = "traj_" + traj.id + ".bin";
        std::ofstream f(dir / fname, std::ios::binary | std::ios::trunc);
        if (!f) throw_io("cannot open " + (dir / fname).string() + " for writing");
        f.write(buf.data(), std::streamsize(buf.size()));
        if (!f) throw_io("write failed for " + (dir / fname).string());

        manifest.entries.push_back(
            {traj.id, traj.label, traj.mode, traj.seed, int(T), fname});
    }

    json mj;
    mj["version"] = manifest.version;
    mj["env"] = manifest.env;
    json list = json::array();
    for (const ManifestEntry& e : manifest.entries) {
        json je;
        je["id"] = e.id;
        je["label"] = to_string(e.label);
        je["mode"] = to_string(e.mode);
        je["seed"] = e.seed;
        je["length"] = e.length;
        je["file"] = e.file;
        list.push_back(std::move(je));
    }
    mj["trajectories"] = std::move(list);
    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw_io("cannot open manifest for writing in " + dir.string());
    mf << mj.dump(2) << "\n";
    if (!mf) throw_io("manifest write failed in " + dir.string());
    return manifest;
}

ArchiveManifest read_manifest(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw_io("cannot open manifest in " + dir.string());
    json mj;
    try {
        mf >> mj;
    } catch (const std::exception& e) {
        throw_format("manifest is not valid JSON: " + std::string(e.what()));
    }
    ArchiveManifest manifest;
    manifest.version = mj.at("version").get<int>();
    if (manifest.version != 1) throw_format("unsupported archive version");
    manifest.env = mj.value("env", json::object());
    for (const auto& je : mj.at("trajectories")) {
        ManifestEntry e;
        e.id = je.at("id").get<std::string>();
        e.label = label_from_string(je.at("label").get<std::string>());
        e.mode = mode_from_string(je.at("mode").get<std::string>());
        e.seed = je.at("seed").get<int64_t>();
        e.length = je.at("length").get<int>();
        e.file = je.at("file").get<std::string>();
        manifest.entries.push_back(std::move(e));
    }
    return manifest;
}

Trajectory read_trajectory(const std::filesystem::path& dir, const ManifestEntry& entry) {
    const std::filesystem::path path = dir / entry.file;
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_io("missing trajectory file " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 8 || std::memcmp(buf.data(), kMagic, 8) != 0)
        throw_format("bad magic in " + path.string());
    if (buf.size() < 32)
        throw_format("corrupt trajectory " + path.string() + ": truncated header at byte offset " +
                     std::to_string(buf.size()));
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
    const uint32_t T = get_u32(p + 8);
    const uint32_t h = get_u32(p + 12);
    const uint32_t w = get_u32(p + 16);
    const uint32_t c = get_u32(p + 20);
    const uint32_t pd = get_u32(p + 24);
    const uint32_t ad = get_u32(p + 28);
    const uint64_t need = 32 + uint64_t(T) * (uint64_t(h) * w * c + pd + ad) * 4;
    if (buf.size() < need)
        throw_format("corrupt trajectory " + path.string() + ": need " + std::to_string(need) +
                     " bytes, file ends at byte offset " + std::to_string(buf.size()));

    Trajectory traj;
    traj.id = entry.id;
    traj.label = entry.label;
    traj.mode = entry.mode;
    traj.seed = entry.seed;
    const unsigned char* cur = p + 32;
    auto read_f32 = [&cur]() {
        uint32_t u = get_u32(cur);
        cur += 4;
        float v;
        std::memcpy(&v, &u, 4);
        return v;
    };
    traj.states.resize(T);
    for (uint32_t t = 0; t < T; ++t) {
        State& s = traj.states[t];
        s.t = int(t);
        s.image = Tensor::zeros({int(h), int(w), int(c)});
        for (float& v : s.image.data) v = read_f32();
    }
    for (uint32_t t = 0; t < T; ++t) {
        traj.states[t].proprio.resize(pd);
        for (float& v : traj.states[t].proprio) v = read_f32();
    }
    traj.actions.resize(T);
    for (uint32_t t = 0; t < T; ++t) {
        traj.actions[t].delta.resize(ad);
        for (float& v : traj.actions[t].delta) v = read_f32();
    }
    if (int(T) != entry.length)
        throw_format("trajectory " + path.string() + " length disagrees with manifest");
    return traj;
}

std::vector<Trajectory> read_archive(const std::filesystem::path& dir) {
    const ArchiveManifest manifest = read_manifest(dir);
    std::vector<Trajectory> out;
    out.reserve(manifest.entries.size());
    for (const ManifestEntry& e : manifest.entries) out.push_back(read_trajectory(dir, e));
    return out;
}

} // namespace wmmon::trajkit
