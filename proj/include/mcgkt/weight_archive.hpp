#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mcgkt/model.hpp"
#include "mcgkt/tensor.hpp"

namespace mcgkt {

// Binary tensor container: magic "MCGW1\n", an 8-byte little-endian manifest
// length, the UTF-8 manifest, then a blob of little-endian float32 data.
// Manifest entries are `name dtype d0,d1,... offset length` lines; lines
// starting with '#' carry `# key value` header metadata and are skipped by
// generic readers.
struct ArchiveEntry {
  std::string name;
  std::vector<Index> dims;
  std::uint64_t offset = 0;  // bytes into the blob
  std::uint64_t length = 0;  // bytes
};

class WeightArchive {
 public:
  void add(const std::string& name, const std::vector<Index>& dims, const float* data);
  void add(const std::string& name, const Shape& shape, const Array& values);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  const ArchiveEntry& entry(const std::string& name) const;
  const std::vector<ArchiveEntry>& entries() const { return entries_; }
  Eigen::Map<const Array> values(const std::string& name) const;

  void set_header(const std::string& key, const std::string& value);
  const std::string* header(const std::string& key) const;

  void save(const std::filesystem::path& path) const;
  static WeightArchive load(const std::filesystem::path& path);

 private:
  std::vector<ArchiveEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
  std::vector<std::pair<std::string, std::string>> header_;
  std::vector<float> blob_;
};

// One external-to-model tensor assignment, e.g. {"conv1_1.weight",
// "enc1.conv1.weight"}.
struct MappingEntry {
  std::string archive_name;
  std::string slot;
};

struct ImportReport {
  std::vector<MappingEntry> copied;
  std::vector<MappingEntry> skipped_by_shape;
  std::vector<std::string> unmapped_slots;  // encoder convs of blocks 1..3 left at init
  std::string str() const;
};

// Default mapping convention: archive entries named conv<stage>_<k>.weight /
// .bias (stage 1..3, k ascending) map onto encoder block <stage> convs
// 1..min(available,3). Block 4 is never mapped.
std::vector<MappingEntry> default_vgg_mapping(const WeightArchive& archive);

// Copies mapped tensors whose shapes match exactly; shape mismatches are
// recorded, not fatal. An explicitly mapped name missing from the archive is
// a mapping error. Empty mapping selects the default convention.
ImportReport import_ekt(MCGKTModel& model, const WeightArchive& archive,
                        std::vector<MappingEntry> mapping = {});

// Model persistence on top of the archive format; round trips are
// parameter-wise bit-identical and embed the config in the manifest header.
void save_model(const MCGKTModel& model, const std::filesystem::path& path);
MCGKTModel load_model(const std::filesystem::path& path);

}  // namespace mcgkt
