// SPDX-License-Identifier: Apache-2.0
#include "io/checkpoint.hpp"

#include <cstring>
#include <iomanip>
#include <sstream>

#include "common/error.hpp"
#include "common/fs.hpp"

namespace m2a::io {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', '2', 'A', 'C', 'K', 'P', 'T', '\0'};

void put_le(std::string& out, std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const std::string& in, std::size_t at, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
    return v;
}

}  // namespace

std::string to_string(Dtype d) { return d == Dtype::F64 ? "f64" : "f32"; }

Dtype parse_dtype(const std::string& s) {
    if (s == "f64") return Dtype::F64;
    if (s == "f32") return Dtype::F32;
    throw InvalidArgument("unknown dtype '" + s + "' (expected f64|f32)");
}

const num::Tensor* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return &t;
    return nullptr;
}

std::string config_hash(const json& config) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : config.dump()) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

std::string encode_checkpoint(const Checkpoint& ckpt, Dtype dtype) {
    std::string payload;
    json index = json::array();
    for (const auto& [name, t] : ckpt.tensors) {
        const std::size_t offset = payload.size();
        for (double v : t.values()) {
            if (dtype == Dtype::F64) {
                std::uint64_t bits;
                std::memcpy(&bits, &v, 8);
                put_le(payload, bits, 8);
            } else {
                const float f = static_cast<float>(v);
                std::uint32_t bits;
                std::memcpy(&bits, &f, 4);
                put_le(payload, bits, 4);
            }
        }
        index.push_back({{"name", name},
                         {"shape", t.shape()},
                         {"dtype", to_string(dtype)},
                         {"offset", offset},
                         {"nbytes", payload.size() - offset}});
    }
    const json meta = {{"format_version", kCheckpointVersion},
                       {"config_hash", config_hash(ckpt.config)},
                       {"config", ckpt.config},
                       {"info", ckpt.info},
                       {"tensors", index}};
    const std::string text = meta.dump();
    std::string out(kMagic, sizeof kMagic);
    put_le(out, kCheckpointVersion, 4);
    put_le(out, text.size(), 8);
    out += text;
    out += payload;
    return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
    constexpr std::size_t header = sizeof kMagic + 4 + 8;
    if (bytes.size() < header || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw IoError("not a checkpoint (bad magic)");
    }
    const auto version = get_le(bytes, sizeof kMagic, 4);
    if (version != kCheckpointVersion) throw IoError("unsupported checkpoint version " + std::to_string(version));
    const auto meta_len = get_le(bytes, sizeof kMagic + 4, 8);
    if (meta_len > bytes.size() - header) throw IoError("truncated checkpoint metadata");
    json meta;
    try {
        meta = json::parse(bytes.substr(header, meta_len));
    } catch (const json::parse_error& e) {
        throw IoError(std::string("corrupt checkpoint metadata: ") + e.what());
    }
    const std::size_t base = header + meta_len;
    Checkpoint ckpt;
    try {
        ckpt.config = meta.at("config");
        ckpt.info = meta.value("info", json::object());
        if (meta.at("config_hash").get<std::string>() != config_hash(ckpt.config)) {
            throw IoError("checkpoint config hash mismatch");
        }
        for (const auto& e : meta.at("tensors")) {
            const auto name = e.at("name").get<std::string>();
            const auto shape = e.at("shape").get<num::Shape>();
            const Dtype dtype = parse_dtype(e.at("dtype").get<std::string>());
            const auto offset = e.at("offset").get<std::size_t>();
            const auto nbytes = e.at("nbytes").get<std::size_t>();
            const std::size_t width = dtype == Dtype::F64 ? 8 : 4;
            const std::size_t count = num::element_count(shape);
            if (nbytes != count * width) throw IoError("tensor '" + name + "' size does not match its shape");
            if (base + offset + nbytes > bytes.size()) throw IoError("tensor '" + name + "' truncated");
            std::vector<double> values(count);
            for (std::size_t i = 0; i < count; ++i) {
                const auto bits = get_le(bytes, base + offset + i * width, static_cast<int>(width));
                if (dtype == Dtype::F64) {
                    std::memcpy(&values[i], &bits, 8);
                } else {
                    const auto b32 = static_cast<std::uint32_t>(bits);
                    float f;
                    std::memcpy(&f, &b32, 4);
                    values[i] = f;
                }
            }
            ckpt.tensors.emplace_back(name, num::Tensor(shape, std::move(values)));
        }
    } catch (const json::exception& e) {
        throw IoError(std::string("corrupt checkpoint metadata: ") + e.what());
    }
    return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, Dtype dtype) {
    write_file_atomic(path, encode_checkpoint(ckpt, dtype));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const IoError& e) {
        throw IoError(path.string() + ": " + e.what());
    }
}

}  // namespace m2a::io
