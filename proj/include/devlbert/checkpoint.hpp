#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "devlbert/optimizer.hpp"

namespace devlbert {

/// Flat binary parameter container: little-endian u64 header length, JSON
/// header {"format","version","records":[{name,shape,offset}],"meta":{...}},
/// then concatenated little-endian f64 payloads. Offsets are byte positions
/// relative to the start of the payload section.
void save_checkpoint(const std::string& path,
                     const std::vector<Parameter>& params,
                     const nlohmann::json& meta = nlohmann::json::object());

struct Checkpoint {
  std::vector<Parameter> params;
  nlohmann::json meta;
};

/// Throws ValidationError on malformed files.
Checkpoint load_checkpoint(const std::string& path);

/// Copies record payloads into an existing parameter list, matching by name
/// and validating every shape. Throws ValidationError on a missing record or
/// shape mismatch.
void restore_parameters(const Checkpoint& ckpt, std::vector<Parameter>& params);

}  // namespace devlbert
