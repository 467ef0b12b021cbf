#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

#include "protoseg/segmodel/model.hpp"

namespace protoseg::model {

inline constexpr const char* kCheckpointMagic = "PSEG1";

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  ProtoSegModel model;
  std::string stage;                        // last completed stage
  std::map<std::string, std::string> meta;  // free-form key/value pairs
};

/// Layout:
///   PSEG1
///   stage <name>
///   meta <key> <value>            (zero or more)
///   tensor <name> <dtype> <dims>  (one per tensor, dtype f64 | i32 | u8)
///   end
/// followed by the raw little-endian payloads in manifest order.
void write_checkpoint(const std::filesystem::path& path, const ProtoSegModel& model,
                      const std::string& stage, const std::map<std::string, std::string>& meta = {});

Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace protoseg::model
