#ifndef HPTK_CHECKPOINT_HPP
#define HPTK_CHECKPOINT_HPP

#include <string>

#include "hptk/model.hpp"

namespace hptk {

// Checkpoint container: an 8-byte little-endian header length, a UTF-8 JSON
// header {format, version, config, tensors: name -> {dtype, shape, offset,
// length}}, then the raw little-endian float64 payloads in directory order.
// Offsets are relative to the start of the payload section (byte
// 8 + header_length).

void write_checkpoint(const std::string& path, const HybridModel& model);
HybridModel read_checkpoint(const std::string& path);

/// Config (de)serialization shared by checkpoints and reports.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

}  // namespace hptk

#endif
