#pragma once

// Parameter checkpoints: "USEVCKPT", u32 version, the model config as
// key-value text, then named tensors (name, rank, u64 extents, dtype byte,
// little-endian float32/float64 payload).

#include <filesystem>
#include <string>
#include <vector>

#include "usev/model.hpp"

namespace usev {

enum class Precision : std::uint8_t { Float32 = 0, Float64 = 1 };

struct StoredTensor {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<StoredTensor> tensors;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt,
                      Precision precision = Precision::Float64);
Checkpoint read_checkpoint(const std::filesystem::path& path);

Checkpoint snapshot(const UsevModel& model);
/// Copies stored values into the model's parameters. Throws a shape error
/// if the stored config differs from the model's or any tensor is missing
/// or mis-shaped.
void restore(UsevModel& model, const Checkpoint& ckpt);

void save_model(const UsevModel& model, const std::filesystem::path& path,
                Precision precision = Precision::Float64);
/// Builds a model from the config stored in the checkpoint.
UsevModel load_model(const std::filesystem::path& path);

}  // namespace usev
