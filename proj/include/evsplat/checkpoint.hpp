#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "evsplat/trainer.hpp"

namespace evsplat {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// "EVCK", u32 version, u64 length + config JSON, u64 iteration, f64 scene extent,
/// u64 Gaussian count, per Gaussian 12 + F + 1 doubles, then the four networks
/// (u32 layer count; per layer u32 rows, u32 cols, weights column-major, bias).
/// Optimizer moments and densification statistics are not stored; a loaded state starts them
/// from zero and takes each Gaussian's current hard class as its origin class.
std::string encode_checkpoint(const TrainState& state);
/// Throws DataError on anything malformed.
TrainState decode_checkpoint(std::string_view bytes);

}  // namespace evsplat
