#pragma once

// TFT1 tensor blobs and the checkpoint container built from them.
//
// TFT1 blob:   "TFT1" | u32 rank | rank x u32 dims | numel x f64   (all LE)
//
// Checkpoint:  text index, then concatenated TFT1 blobs
//   TRANSFER-CHECKPOINT 1
//   config <key>=<value>              (zero or more)
//   tensor <name> <offset> <shape>    (offset relative to payload start,
//                                      shape as 3x3x16 or "scalar")
//   end
//   <payload>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "transfer/tensor.hpp"

namespace transfer {

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
std::size_t encoded_size(const Tensor& t);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

struct Checkpoint {
  std::vector<std::pair<std::string, std::string>> config;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& tensor(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace transfer
