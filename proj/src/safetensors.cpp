#include "latenthop/safetensors.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "latenthop/error.hpp"

namespace latenthop {

using json = nlohmann::json;

namespace {

DType parse_dtype(const std::string& s) {
    if (s == "F32") return DType::F32;
    if (s == "F16") return DType::F16;
    if (s == "BF16") return DType::BF16;
    if (s == "F64") return DType::F64;
    if (s == "I32") return DType::I32;
    if (s == "I64") return DType::I64;
    if (s == "U8") return DType::U8;
    return DType::Other;
}

size_t dtype_size(DType dt) {
    switch (dt) {
        case DType::F32: case DType::I32: return 4;
        case DType::F16: case DType::BF16: return 2;
        case DType::F64: case DType::I64: return 8;
        case DType::U8: return 1;
        case DType::Other: return 0;
    }
    return 0;
}

uint16_t load_u16(const std::byte* p) {
    return static_cast<uint16_t>(std::to_integer<uint16_t>(p[0]) | (std::to_integer<uint16_t>(p[1]) << 8));
}

uint32_t load_u32(const std::byte* p) {
    uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | std::to_integer<uint32_t>(p[i]);
    return v;
}

}  // namespace

std::string_view to_string(DType dt) {
    switch (dt) {
        case DType::F32: return "F32";
        case DType::F16: return "F16";
        case DType::BF16: return "BF16";
        case DType::F64: return "F64";
        case DType::I32: return "I32";
        case DType::I64: return "I64";
        case DType::U8: return "U8";
        case DType::Other: return "other";
    }
    return "other";
}

int64_t TensorInfo::numel() const {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

float half_to_float(uint16_t h) {
    const uint32_t sign = (h & 0x8000u) << 16;
    uint32_t exp = (h >> 10) & 0x1fu;
    uint32_t mant = h & 0x3ffu;
    uint32_t bits;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            exp = 127 - 15 + 1;
            while ((mant & 0x400u) == 0) {
                mant <<= 1;
                --exp;
            }
            mant &= 0x3ffu;
            bits = sign | (exp << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + 127 - 15) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

float bfloat16_to_float(uint16_t b) { return std::bit_cast<float>(static_cast<uint32_t>(b) << 16); }

TensorFile TensorFile::open(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open weight file " + path.string());
    in.seekg(0, std::ios::end);
    const auto size = static_cast<size_t>(in.tellg());
    in.seekg(0);
    std::vector<std::byte> bytes(size);
    in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
    if (!in) throw LoadError("short read on weight file " + path.string());
    return from_bytes(std::move(bytes), path.string());
}

TensorFile TensorFile::from_bytes(std::vector<std::byte> bytes, std::string origin) {
    TensorFile f;
    f.origin_ = std::move(origin);
    f.bytes_ = std::move(bytes);
    if (f.bytes_.size() < 8) throw LoadError(f.origin_ + ": file too small for a tensor header");
    uint64_t header_len = 0;
    for (int i = 7; i >= 0; --i) header_len = (header_len << 8) | std::to_integer<uint64_t>(f.bytes_[i]);
    if (header_len > f.bytes_.size() - 8) throw LoadError(f.origin_ + ": header length exceeds file size");
    f.data_start_ = 8 + static_cast<size_t>(header_len);
    const size_t data_size = f.bytes_.size() - f.data_start_;

    json header;
    try {
        header = json::parse(reinterpret_cast<const char*>(f.bytes_.data() + 8),
                             reinterpret_cast<const char*>(f.bytes_.data() + f.data_start_));
    } catch (const json::parse_error& e) {
        throw LoadError(f.origin_ + ": tensor header is not valid JSON: " + e.what());
    }
    for (const auto& [name, entry] : header.items()) {
        if (name == "__metadata__") continue;
        TensorInfo info;
        try {
            info.dtype_name = entry.at("dtype").get<std::string>();
            info.shape = entry.at("shape").get<std::vector<int64_t>>();
            const auto offsets = entry.at("data_offsets").get<std::vector<size_t>>();
            if (offsets.size() != 2) throw LoadError(f.origin_ + ": tensor '" + name + "' has malformed data_offsets");
            info.begin = offsets[0];
            info.end = offsets[1];
        } catch (const json::exception& e) {
            throw LoadError(f.origin_ + ": tensor '" + name + "' has a malformed header entry: " + e.what());
        }
        info.dtype = parse_dtype(info.dtype_name);
        if (info.end < info.begin || info.end > data_size) {
            throw LoadError(f.origin_ + ": tensor '" + name + "' data range is outside the file");
        }
        const size_t elem = dtype_size(info.dtype);
        if (elem != 0 && static_cast<size_t>(info.numel()) * elem != info.end - info.begin) {
            throw LoadError(f.origin_ + ": tensor '" + name + "' byte size does not match its shape");
        }
        f.index_.emplace(name, std::move(info));
    }
    return f;
}

const TensorInfo& TensorFile::info(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw LoadError(origin_ + ": missing tensor '" + name + "'");
    return it->second;
}

std::vector<std::string> TensorFile::names() const {
    std::vector<std::string> out;
    out.reserve(index_.size());
    for (const auto& [name, _] : index_) out.push_back(name);
    return out;
}

std::vector<float> TensorFile::read_f32(const std::string& name) const {
    const TensorInfo& ti = info(name);
    const std::byte* p = bytes_.data() + data_start_ + ti.begin;
    const auto n = static_cast<size_t>(ti.numel());
    std::vector<float> out(n);
    switch (ti.dtype) {
        case DType::F32:
            for (size_t i = 0; i < n; ++i) out[i] = std::bit_cast<float>(load_u32(p + 4 * i));
            break;
        case DType::F16:
            for (size_t i = 0; i < n; ++i) out[i] = half_to_float(load_u16(p + 2 * i));
            break;
        case DType::BF16:
            for (size_t i = 0; i < n; ++i) out[i] = bfloat16_to_float(load_u16(p + 2 * i));
            break;
        default:
            throw LoadError(origin_ + ": tensor '" + name + "' has unsupported dtype " + ti.dtype_name);
    }
    return out;
}

void write_tensor_file(const std::filesystem::path& path,
                       const std::map<std::string, std::pair<std::vector<int64_t>, std::vector<float>>>& tensors) {
    json header = json::object();
    size_t offset = 0;
    for (const auto& [name, t] : tensors) {
        const size_t bytes = t.second.size() * 4;
        header[name] = {{"dtype", "F32"}, {"shape", t.first}, {"data_offsets", {offset, offset + bytes}}};
        offset += bytes;
    }
    std::string h = header.dump();
    while ((h.size() + 8) % 8 != 0) h.push_back(' ');
    std::ofstream out(path, std::ios::binary);
    if (!out) throw LoadError("cannot write weight file " + path.string());
    uint64_t len = h.size();
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((len >> (8 * i)) & 0xff));
    out.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (const auto& [name, t] : tensors) {
        for (float v : t.second) {
            const auto bits = std::bit_cast<uint32_t>(v);
            for (int i = 0; i < 4; ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xff));
        }
    }
}

}  // namespace latenthop
