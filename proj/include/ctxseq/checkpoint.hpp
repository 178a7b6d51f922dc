#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ctxseq/adam.hpp"
#include "ctxseq/seq2seq.hpp"
#include "ctxseq/topic_cnn.hpp"

namespace ctxseq {

// On-disk model state. Binary little-endian layout:
//   magic "CTXS" | u32 version=1 | u32 len + canonical key=value meta block |
//   u32 tensor count | per tensor: u32 len + name, u32 rank, u64 dims...,
//   raw floats (32- or 64-bit per meta "precision") | u32 CRC32 of all
//   preceding bytes.
struct Checkpoint {
  static constexpr uint32_t kVersion = 1;
  std::map<std::string, std::string> meta;  // serialized sorted by key
  std::vector<std::pair<std::string, Tensor>> tensors;

  std::string meta_at(const std::string& key) const;
  int64_t meta_int(const std::string& key) const;
  double meta_double(const std::string& key) const;
  bool has_meta(const std::string& key) const { return meta.count(key) > 0; }
};

void checkpoint_save(const std::string& path, const Checkpoint& ckpt);
Checkpoint checkpoint_load(const std::string& path);

// Everything needed to run one trained model: decoder parameters, the topic
// encoder for contextual kinds, and training progress for resumption.
struct ModelBundle {
  ModelParams model;
  std::optional<CnnParams> cnn;
  uint32_t vocab_hash = 0;
  std::string precision = "f64";  // checkpoint float width
  uint64_t seed = 0;
  int64_t step = 0;
  int stage = 0;   // completed-stage cursor
  int epoch = 0;   // epochs completed within the current stage
  std::map<std::string, AdamState> adam;

  Checkpoint to_checkpoint() const;
  static ModelBundle from_checkpoint(const Checkpoint& ckpt);
};

void model_config_to_meta(const ModelConfig& cfg, std::map<std::string, std::string>& meta);
ModelConfig model_config_from_meta(const Checkpoint& ckpt);

// LoadError when the checkpoint was written for a different model shape.
void require_compatible(const Checkpoint& ckpt, const ModelConfig& expected);

uint32_t buffer_crc32(const std::string& bytes);

}  // namespace ctxseq
