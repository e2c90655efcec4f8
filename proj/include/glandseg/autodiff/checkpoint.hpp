#pragma once

// Checkpoint layout (all header text is ASCII, one record per line):
//
//   GLANDSEG-CHECKPOINT 1
//   tensors <count>
//   <name> <trainable 0|1> <rank> <d0> ... <d{rank-1}>     (count lines)
//   data
//   <binary32 little-endian values of every tensor, in table order>
//
// Names never contain whitespace.

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "glandseg/autodiff/graph.hpp"
#include "glandseg/error.hpp"

namespace glandseg::ad {

inline constexpr const char* kCheckpointMagic = "GLANDSEG-CHECKPOINT 1";

template <typename T>
std::string encode_checkpoint(const ParameterSet<T>& params) {
    std::ostringstream header;
    header << kCheckpointMagic << '\n' << "tensors " << params.size() << '\n';
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        header << p.name << ' ' << (p.trainable ? 1 : 0) << ' ' << p.value.rank();
        for (int d : p.value.shape()) header << ' ' << d;
        header << '\n';
    }
    header << "data\n";
    std::string out = header.str();
    for (std::size_t i = 0; i < params.size(); ++i) {
        for (T v : params[i].value.values()) {
            const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
            for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
        }
    }
    return out;
}

template <typename T>
ParameterSet<T> decode_checkpoint(const std::string& bytes) {
    std::size_t pos = 0;
    auto line = [&]() {
        const auto nl = bytes.find('\n', pos);
        if (nl == std::string::npos) throw DataError("truncated checkpoint header");
        std::string l = bytes.substr(pos, nl - pos);
        pos = nl + 1;
        return l;
    };
    if (line() != kCheckpointMagic) throw DataError("not a glandseg checkpoint");
    std::istringstream count_line(line());
    std::string word;
    std::size_t count = 0;
    if (!(count_line >> word >> count) || word != "tensors") throw DataError("malformed checkpoint tensor count");
    struct Entry {
        std::string name;
        bool trainable;
        Shape shape;
    };
    std::vector<Entry> entries;
    for (std::size_t i = 0; i < count; ++i) {
        std::istringstream ls(line());
        Entry e;
        int trainable = 0, rank = 0;
        if (!(ls >> e.name >> trainable >> rank) || rank < 1) throw DataError("malformed checkpoint entry");
        e.trainable = trainable != 0;
        e.shape.resize(static_cast<std::size_t>(rank));
        for (auto& d : e.shape)
            if (!(ls >> d) || d < 1) throw DataError("malformed checkpoint shape for '" + e.name + "'");
        entries.push_back(std::move(e));
    }
    if (line() != "data") throw DataError("checkpoint data marker missing");
    ParameterSet<T> out;
    for (auto& e : entries) {
        const std::size_t n = element_count(e.shape);
        if (bytes.size() < pos + 4 * n) throw DataError("truncated checkpoint data for '" + e.name + "'");
        std::vector<T> values(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[pos + 4 * i + b])) << (8 * b);
            values[i] = static_cast<T>(std::bit_cast<float>(bits));
        }
        pos += 4 * n;
        out.add(e.name, Tensor<T>(e.shape, std::move(values)), e.trainable);
    }
    if (pos != bytes.size()) throw DataError("trailing bytes after checkpoint data");
    return out;
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParameterSet<T>& params) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path.string());
    const auto bytes = encode_checkpoint(params);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
ParameterSet<T> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("checkpoint not found: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return decode_checkpoint<T>(bytes);
}

}  // namespace glandseg::ad
