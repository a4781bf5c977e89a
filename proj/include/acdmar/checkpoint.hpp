#pragma once

// Checkpoint container:
//
//   "ACDCKPT\0"  u32 version  u32 n_tensors
//   n_tensors x { u32 name_len, name bytes, u8 dtype (1 = f64), u8 flags
//                 (bit0 = trainable), u32 ndim, ndim x u64 dims }
//   payloads in manifest order, little-endian 64-bit floats
//
// A sidecar `<path>.cfg` holds key=value lines with the model configuration
// needed to rebuild the network before the tensors are loaded.

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "acdmar/acdnet.hpp"
#include "acdmar/trainer.hpp"

namespace acdmar::acdnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  ad::Tensor value;
  bool trainable = false;
};

void write_tensor_container(const std::filesystem::path& path, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensor_container(const std::filesystem::path& path);

struct Checkpoint {
  Network net;
  std::optional<AdamState> optimizer;
  std::map<std::string, std::string> sidecar;
};

void save_checkpoint(const std::filesystem::path& path, const Network& net, const AdamState* optimizer,
                     const std::map<std::string, std::string>& extra_sidecar = {});

Checkpoint load_checkpoint(const std::filesystem::path& path);

std::map<std::string, std::string> read_sidecar(const std::filesystem::path& path);

}  // namespace acdmar::acdnet
