#pragma once

#include <optional>
#include <string>

#include "prunelab/optim.hpp"

namespace prunelab {

// Canonical one-line model description, e.g.
//   input=784;classes=10;layers=flatten|dense:784:300:relu:bias|...
// Round-trips through parse_model_text exactly.
std::string model_spec_text(const ModelSpec& spec);
ModelSpec parse_model_text(const std::string& text);

// Binary checkpoint:
//   magic "PRLB", 1-byte version, length-prefixed model-spec text,
//   8-byte init seed, 4-byte parameter count, then per-parameter records
//   {length-prefixed id, 1-byte rank, little-endian 4-byte dims, raw
//   little-endian float32 value payload, raw 0/1 mask bytes}, then an
//   optional optimizer-state section.
// All lengths little-endian. The float payloads round-trip bit for bit.
void save_checkpoint(const Model& model, const OptimizerState* optimizer,
                     const std::string& path);

struct CheckpointData {
  Model model;
  std::optional<OptimizerState> optimizer;
};

CheckpointData load_checkpoint(const std::string& path);

}  // namespace prunelab
