// SPDX-License-Identifier: Apache-2.0
#include "checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace wmmon::nnkit {

namespace {

constexpr char kMagic[8] = {'W', 'M', 'C', 'K', 'P', 'T', '0', '1'};

void put_u32(std::string& out, uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

uint32_t get_u32(const unsigned char* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

void append_f32(std::string& out, const float* data, size_t n) {
    static_assert(sizeof(float) == 4);
    uint32_t u;
    for (size_t i = 0; i < n; ++i) {
        std::memcpy(&u, &data[i], 4);
        put_u32(out, u);
    }
}

} // namespace

void save_checkpoint(const ParamSet& params, const json& meta, const std::filesystem::path& path) {
    json tensors = json::array();
    uint64_t offset = 0;
    for (const auto& [name, t] : params.tensors) {
        json entry;
        entry["name"] = name;
        entry["shape"] = t.shape;
        entry["offset"] = offset;
        tensors.push_back(std::move(entry));
        offset += uint64_t(t.size()) * 4;
    }
    json header;
    header["meta"] = meta;
    header["tensors"] = std::move(tensors);
    const std::string header_str = header.dump();

    std::string out;
    out.reserve(12 + header_str.size() + offset);
    out.append(kMagic, 8);
    put_u32(out, uint32_t(header_str.size()));
    out += header_str;
    for (const auto& [name, t] : params.tensors) append_f32(out, t.data.data(), t.data.size());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw_io("cannot open checkpoint for writing: " + path.string());
    f.write(out.data(), std::streamsize(out.size()));
    if (!f) throw_io("checkpoint write failed: " + path.string());
}

std::pair<ParamSet, json> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw_io("cannot open checkpoint: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (buf.size() < 12) throw_format("checkpoint truncated: " + path.string());
    if (std::memcmp(buf.data(), kMagic, 8) != 0)
        throw_format("bad checkpoint magic in " + path.string());
    const unsigned char* p = reinterpret_cast<const unsigned char*>(buf.data());
    const uint32_t hlen = get_u32(p + 8);
    if (12 + uint64_t(hlen) > buf.size()) throw_format("checkpoint header truncated: " + path.string());
    json header;
    try {
        header = json::parse(buf.substr(12, hlen));
    } catch (const std::exception& e) {
        throw_format("checkpoint header is not valid JSON: " + std::string(e.what()));
    }
    if (!header.contains("meta") || !header.contains("tensors"))
        throw_format("checkpoint header missing meta/tensors");

    const uint64_t data_start = 12 + hlen;
    const uint64_t data_len = buf.size() - data_start;
    ParamSet params;
    for (const auto& entry : header["tensors"]) {
        const std::string name = entry.at("name").get<std::string>();
        const std::vector<int> shape = entry.at("shape").get<std::vector<int>>();
        const uint64_t offset = entry.at("offset").get<uint64_t>();
        const uint64_t nbytes = uint64_t(numel(shape)) * 4;
        if (offset + nbytes > data_len)
            throw_format("checkpoint tensor '" + name + "' offset/shape inconsistent with file size");
        Tensor t = Tensor::zeros(shape);
        const unsigned char* src = p + data_start + offset;
        for (int64_t i = 0; i < t.size(); ++i) {
            uint32_t u = get_u32(src + uint64_t(i) * 4);
            float v;
            std::memcpy(&v, &u, 4);
            t.data[size_t(i)] = v;
        }
        params.add(name, std::move(t));
    }
    return {std::move(params), header["meta"]};
}

} // namespace wmmon::nnkit
