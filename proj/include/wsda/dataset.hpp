#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wsda/scenegen.hpp"

namespace wsda::gen {

struct DatasetManifest {
  int n_images = 0;
  DomainTag domain = DomainTag::source;
  LabelMode label_mode = LabelMode::full;
  uint64_t generator_seed = 0;
  Split split = Split::train;
  int height = kImageH;
  int width = kImageW;
  int num_classes = kNumClasses;
};

std::string to_string(DomainTag t);
std::string to_string(LabelMode m);
std::string to_string(Split s);
std::string to_string(ClutterLevel c);
DomainTag domain_from_string(const std::string& s);
LabelMode label_mode_from_string(const std::string& s);
Split split_from_string(const std::string& s);
ClutterLevel clutter_from_string(const std::string& s);

// PPM (P6) / PGM (P5) encode/decode; byte-exact, codec-free.
std::string encode_ppm(const Image& img);
Image decode_ppm(const std::string& bytes);
std::string encode_pgm(const MaskGrid& mask);
MaskGrid decode_pgm(const std::string& bytes);

// Generates and writes a dataset directory:
//   manifest.json, images/%06d.ppm, masks/%06d_%02d.pgm (full mode),
//   annotations.jsonl
// The manifest records every generation parameter and an FNV-1a content
// digest over all emitted payload bytes. Re-invoking on an existing
// directory verifies the digest and skips the rewrite; a digest mismatch
// throws (dataset corruption). Returns the content digest.
uint64_t write_dataset(const DatasetManifest& manifest, const DomainConfig& config, const std::string& dir);

struct AccessStats {
  size_t images = 0;
  size_t boxes = 0;   // box/class record accesses
  size_t masks = 0;   // mask label accesses
  size_t poses = 0;   // angle/depth label accesses
};

// Read-side of the dataset format. Annotation records are loaded eagerly;
// images and mask files are decoded on demand. Counts every label access so
// tests can prove which supervision a training run consumed.
class DatasetReader {
 public:
  explicit DatasetReader(const std::string& dir);

  const DatasetManifest& manifest() const { return manifest_; }
  const DomainConfig& config() const { return config_; }
  int size() const { return manifest_.n_images; }
  bool has_attributes() const { return manifest_.label_mode == LabelMode::full; }

  Image image(int i) const;
  const std::vector<Box>& boxes(int i) const;
  const std::vector<int>& classes(int i) const;
  std::vector<MaskGrid> masks(int i) const;        // throws on weak datasets
  const std::vector<double>& angles(int i) const;  // throws on weak datasets
  const std::vector<double>& depths(int i) const;  // throws on weak datasets

  const AccessStats& stats() const { return stats_; }
  void reset_stats() { stats_ = {}; }

 private:
  struct Record {
    std::vector<Box> boxes;
    std::vector<int> classes;
    std::vector<double> angles, depths;
    int n_masks = 0;
  };

  std::string dir_;
  DatasetManifest manifest_;
  DomainConfig config_;
  std::vector<Record> records_;
  mutable std::vector<std::string> image_bytes_;  // cached raw PPM bytes
  mutable AccessStats stats_;
};

std::string image_path(const std::string& dir, int index);
std::string mask_path(const std::string& dir, int index, int obj);

}  // namespace wsda::gen
