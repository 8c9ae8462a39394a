#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "engageformer/model.hpp"
#include "engageformer/tensor.hpp"

namespace engageformer {

// Checkpoint file format (little-endian throughout):
//   magic "EFCK" | u32 version = 1 | u32 tensor count
//   per tensor: u16 name length | name bytes (UTF-8) | u8 rank |
//               u32 extent per axis | float32 payload, row-major
// Tensor names are the layout's dotted paths; files written in layout order.

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw CheckpointError("truncated checkpoint while reading " + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t read_u16(std::istream& is, const std::string& what) {
    unsigned char b[2];
    if (!is.read(reinterpret_cast<char*>(b), 2))
        throw CheckpointError("truncated checkpoint while reading " + what);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline void write_f32(std::ostream& os, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    write_u32(os, bits);
}

inline float read_f32_bits(std::uint32_t bits) {
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

}  // namespace detail

template <typename S>
void save_checkpoint(const std::string& path, const ModelLayout& lay, const ParamSet<S>& ps) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open checkpoint for writing: " + path);
    os.write("EFCK", 4);
    detail::write_u32(os, 1);
    detail::write_u32(os, static_cast<std::uint32_t>(lay.params.size()));
    for (std::size_t i = 0; i < lay.params.size(); ++i) {
        const ParamInfo& info = lay.params[i];
        detail::write_u16(os, static_cast<std::uint16_t>(info.name.size()));
        os.write(info.name.data(), static_cast<std::streamsize>(info.name.size()));
        os.put(static_cast<char>(info.shape.size()));
        for (std::size_t e : info.shape) detail::write_u32(os, static_cast<std::uint32_t>(e));
        const Tensor<S>& t = ps.values[i];
        for (std::size_t j = 0; j < t.numel(); ++j)
            detail::write_f32(os, static_cast<float>(t[j]));
    }
    if (!os) throw DataError("write failed for checkpoint: " + path);
}

// Loads a checkpoint against a layout; every layout tensor must be present
// with its exact shape and no extra tensors may remain. Errors name the
// offending tensor.
template <typename S>
ParamSet<S> load_checkpoint(const std::string& path, const ModelLayout& lay) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4) || std::string(magic, 4) != "EFCK")
        throw CheckpointError("bad checkpoint magic in " + path);
    const std::uint32_t version = detail::read_u32(is, "version");
    if (version != 1)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t count = detail::read_u32(is, "tensor count");

    std::map<std::string, std::pair<Shape, std::vector<S>>> loaded;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = detail::read_u16(is, "name length");
        std::string name(name_len, '\0');
        if (!is.read(name.data(), name_len))
            throw CheckpointError("truncated checkpoint while reading a tensor name");
        const int rank = is.get();
        if (rank == EOF || rank == 0)
            throw CheckpointError("bad rank for tensor " + name);
        Shape shape;
        for (int r = 0; r < rank; ++r)
            shape.push_back(detail::read_u32(is, "extent of " + name));
        const std::size_t n = shape_numel(shape);
        std::vector<S> data(n);
        for (std::size_t j = 0; j < n; ++j)
            data[j] = static_cast<S>(
                detail::read_f32_bits(detail::read_u32(is, "payload of " + name)));
        if (loaded.count(name)) throw CheckpointError("duplicate tensor " + name);
        loaded.emplace(std::move(name), std::make_pair(std::move(shape), std::move(data)));
    }
    if (is.peek() != EOF) throw CheckpointError("trailing bytes after last tensor in " + path);

    ParamSet<S> ps;
    ps.values.reserve(lay.params.size());
    for (const ParamInfo& info : lay.params) {
        auto it = loaded.find(info.name);
        if (it == loaded.end())
            throw CheckpointError("checkpoint is missing tensor " + info.name);
        if (it->second.first != info.shape)
            throw CheckpointError("tensor " + info.name + " has shape " +
                                  shape_str(it->second.first) + ", config expects " +
                                  shape_str(info.shape));
        ps.values.emplace_back(it->second.first, std::move(it->second.second));
        loaded.erase(it);
    }
    if (!loaded.empty())
        throw CheckpointError("checkpoint has unexpected tensor " + loaded.begin()->first);
    return ps;
}

}  // namespace engageformer
