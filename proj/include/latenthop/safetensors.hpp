#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace latenthop {

enum class DType { F32, F16, BF16, F64, I32, I64, U8, Other };

std::string_view to_string(DType dt);

struct TensorInfo {
    DType dtype = DType::Other;
    std::string dtype_name;
    std::vector<int64_t> shape;
    size_t begin = 0;  // byte offset into the data section
    size_t end = 0;

    int64_t numel() const;
};

/// Single-file tensor dictionary: u64 little-endian header length, a JSON
/// header mapping names to dtype/shape/data_offsets, then the raw data.
class TensorFile {
public:
    static TensorFile open(const std::filesystem::path& path);
    static TensorFile from_bytes(std::vector<std::byte> bytes, std::string origin = "<memory>");

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    const TensorInfo& info(const std::string& name) const;
    std::vector<std::string> names() const;

    /// Converts to float32; F32, F16 and BF16 are accepted.
    std::vector<float> read_f32(const std::string& name) const;

    const std::string& origin() const { return origin_; }

private:
    std::string origin_;
    std::vector<std::byte> bytes_;
    size_t data_start_ = 0;
    std::map<std::string, TensorInfo> index_;
};

/// Writes float32 tensors in the same format (used for fixtures and tests).
void write_tensor_file(const std::filesystem::path& path,
                       const std::map<std::string, std::pair<std::vector<int64_t>, std::vector<float>>>& tensors);

float half_to_float(uint16_t h);
float bfloat16_to_float(uint16_t b);

}  // namespace latenthop
