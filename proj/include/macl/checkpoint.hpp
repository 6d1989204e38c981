#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "macl/cgan.hpp"
#include "macl/rng.hpp"

namespace macl::gan {

// Layout, all integers little-endian:
//   "MACL" | u32 version | u32 param_count
//   per param: u16 name_len | name (UTF-8) | u8 dtype (0 = f32, 1 = f64) | u8 rank | u32 dims[rank] | values
//   u64 training_step | 32-byte RNG state
inline constexpr char kCheckpointMagic[4] = {'M', 'A', 'C', 'L'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct CheckpointEntry {
    std::string name;
    DType dtype = DType::f32;
    Shape shape;
    std::vector<double> values;  // f32 entries hold exactly representable floats
};

struct CheckpointData {
    std::uint32_t version = kCheckpointVersion;
    std::vector<CheckpointEntry> entries;
    std::uint64_t step = 0;
    Rng::State rng{};
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData read_checkpoint(const std::filesystem::path& path);

/// Generator parameters first, then discriminator parameters, each in store order.
template <typename T>
CheckpointData to_checkpoint(const Cgan<T>& model);

/// Rebuilds a model of architecture `base` (label count taken from the file)
/// and fills it from `data`. Every parameter name and shape must match.
template <typename T>
Cgan<T> from_checkpoint(const CheckpointData& data, const ModelSpec& base);

template <typename T>
void save(const Cgan<T>& model, const std::filesystem::path& path) {
    write_checkpoint(path, to_checkpoint(model));
}

template <typename T>
Cgan<T> load(const std::filesystem::path& path, const ModelSpec& base) {
    return from_checkpoint<T>(read_checkpoint(path), base);
}

}  // namespace macl::gan
