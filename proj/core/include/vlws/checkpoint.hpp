#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "vlws/nn.hpp"

namespace vlws {

// Versioned binary container of named parameter arrays plus metadata
// (configs and the training-run fingerprint). Load fails loudly on magic or
// version mismatch.
struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

void save_checkpoint(const std::string& path, const std::map<std::string, std::string>& meta,
                     const ParamStore& params);
Checkpoint load_checkpoint(const std::string& path);

// Copies tensors into matching named parameters; name or shape mismatch is an
// error.
void restore_params(ParamStore& params, const Checkpoint& ckpt);

}  // namespace vlws
