#pragma once

#include "goct/model.h"

#include <string>
#include <string_view>

namespace goct::nn {

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Binary model image: magic `GOCTMODL`, u32 version, config entries as
/// (u32 len, key, u32 len, value) pairs, then tensors as (u32 name length,
/// name, u32 rank, u32 dims..., little-endian f32 data). Feature
/// normalization travels as the rank-1 tensors `feature_norm.mean` and
/// `feature_norm.stddev`.
std::string encode_model(const ModelParams& params);
ModelParams decode_model(std::string_view bytes);

void save_model(const std::string& path, const ModelParams& params);
ModelParams load_model(const std::string& path);

} // namespace goct::nn
