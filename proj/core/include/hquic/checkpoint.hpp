#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "hquic/codec.hpp"

namespace hquic {

// Self-describing model container: config text, all parameters with their
// Adam state, frozen CDF tables, and a parameter hash for integrity.
void save_checkpoint(const std::string& path, Model& model, std::int64_t step);

struct LoadedCheckpoint {
  std::unique_ptr<Model> model;
  std::int64_t step = 0;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace hquic
