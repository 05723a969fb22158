#pragma once

#include <filesystem>
#include <vector>

#include "uotalign/config.hpp"
#include "uotalign/trainer.hpp"

namespace uotalign {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// "UCK1", u32 version, u32 metadata length, metadata JSON, u32 tensor count,
// then per tensor: u32 name length, name, u32 rows, u32 cols, f64 payload.
// All integers and floats little-endian.
struct Checkpoint {
    RunConfig config;
    TrainState state;
};

std::vector<unsigned char> encode_checkpoint(const TrainState& state, const RunConfig& config);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const RunConfig& config);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace uotalign
