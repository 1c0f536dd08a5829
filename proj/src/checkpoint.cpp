#include "fusionbench/checkpoint.hpp"

#include <fstream>

#include "fusionbench/bytes.hpp"

namespace fusion::bytes {

std::vector<std::uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, std::span<const std::uint8_t> data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    if (!out) throw ConfigError("short write to file: " + path);
}

}  // namespace fusion::bytes

namespace fusion::ckpt {

namespace {
constexpr char kMagic[4] = {'F', 'Z', 'C', 'P'};
constexpr std::uint16_t kVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode(const model::ParamList& params) {
    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    bytes::put_u16(out, kVersion);
    bytes::put_u32(out, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        bytes::put_u16(out, static_cast<std::uint16_t>(p.name.size()));
        out.insert(out.end(), p.name.begin(), p.name.end());
        bytes::put_u8(out, static_cast<std::uint8_t>(p.shape.size()));
        std::size_t count = 1;
        for (int e : p.shape) {
            bytes::put_u32(out, static_cast<std::uint32_t>(e));
            count *= static_cast<std::size_t>(e);
        }
        if (count != p.values.size())
            throw ContractError("param '" + p.name + "' shape/value mismatch");
        for (float v : p.values) bytes::put_f32(out, v);
    }
    return out;
}

model::ParamList decode(std::span<const std::uint8_t> data) {
    bytes::Reader r(data, "checkpoint");
    r.expect_magic(kMagic);
    const std::size_t version_at = r.offset();
    if (r.u16() != kVersion) throw ParseError("checkpoint: unsupported version", version_at);
    const std::uint32_t count = r.u32();
    model::ParamList out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        model::ParamRecord rec;
        rec.offset = r.offset();
        const std::uint16_t name_len = r.u16();
        rec.name = r.str(name_len);
        const std::uint8_t rank = r.u8();
        std::size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            const std::size_t at = r.offset();
            const std::uint32_t e = r.u32();
            if (e == 0)
                throw ParseError("checkpoint: zero extent in parameter '" + rec.name + "'", at);
            rec.shape.push_back(static_cast<int>(e));
            numel *= e;
        }
        rec.values.resize(numel);
        for (std::size_t v = 0; v < numel; ++v) rec.values[v] = r.f32();
        out.push_back(std::move(rec));
    }
    if (r.remaining() != 0)
        throw ParseError("checkpoint: trailing bytes after last record", r.offset());
    return out;
}

void save(const std::string& path, const model::ParamList& params) {
    auto data = encode(params);
    bytes::write_file(path, data);
}

model::ParamList load(const std::string& path) {
    auto data = bytes::read_file(path);
    return decode(data);
}

}  // namespace fusion::ckpt
