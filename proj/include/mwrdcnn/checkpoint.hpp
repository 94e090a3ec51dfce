#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mwrdcnn/network.hpp"
#include "mwrdcnn/training.hpp"

namespace mwrdcnn {

// On-disk model state: architecture, training position, RNG engine state and
// every parameter tensor (with Adam moments for the trainable ones). The
// format is binary, little-endian and versioned; floats round-trip bitwise.
struct Checkpoint {
  ModelConfig config;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  std::string rng_state;

  struct Entry {
    std::string name;
    bool trainable = false;
    Shape shape{0, 0, 0, 0};
    std::vector<float> value;
    std::vector<float> m, v;  // empty unless trainable
  };
  std::vector<Entry> entries;
};

Checkpoint make_checkpoint(const ModelConfig& config, const ParamStore<float>& ps,
                           const TrainProgress& progress);

// Rebuilds the architecture described by cp.config and loads the stored
// tensors into it. Throws if the stored names, shapes or flags do not match.
ParamStore<float> restore_params(const Checkpoint& cp);

// Serializes to <path>.tmp first and renames, so a crash never leaves a
// half-written checkpoint at the destination.
void save_checkpoint(const std::string& path, const Checkpoint& cp);

Checkpoint load_checkpoint(const std::string& path);

// Empty when equal; otherwise one line naming every differing field.
std::string config_diff(const ModelConfig& a, const ModelConfig& b);

}  // namespace mwrdcnn
