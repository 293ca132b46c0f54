#pragma once

#include <filesystem>
#include <iosfwd>

#include "smcpose/predictor.hpp"

namespace smcpose {

inline constexpr std::uint32_t kModelFormatVersion = 1;

// Binary model file: 8-byte magic, u32 version, u32-length JSON header with
// the hyperparameters, then a u32 tensor count and for each tensor its name,
// rank, dimensions and little-endian float32 data.
void save_model(const PredictorModel& model, std::ostream& out);
void save_model(const PredictorModel& model, const std::filesystem::path& path);
PredictorModel load_model(std::istream& in);
PredictorModel load_model(const std::filesystem::path& path);

}  // namespace smcpose
