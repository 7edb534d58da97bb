#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "gbs/blend.hpp"
#include "gbs/eval.hpp"

// JSON-lines dataset manifest:
//   {"id": "...", "image": "images/x.png", "caption": "...",
//    "phrases": [{"phrase": "...", "boxes": [[x_min, y_min, x_max, y_max], ...]}]}
// Image paths are relative to the manifest's directory.
namespace gbs::manifest {

struct PhraseRecord {
  std::string phrase;
  std::vector<eval::Box> boxes;
};

struct Record {
  std::string id;
  std::string image;  // relative path
  std::string caption;
  std::vector<PhraseRecord> phrases;
};

// Environment variable consulted when a manifest path does not exist as given.
inline constexpr const char* kDataRootEnv = "GBS_DATA_ROOT";

std::filesystem::path resolve(const std::filesystem::path& path);

std::vector<Record> read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const std::vector<Record>& records);

std::vector<blend::ImageTextPair> load_pairs(const std::filesystem::path& path);
// One sample per (record, phrase); records without phrases are a data error.
// category = first token of the phrase.
std::vector<eval::GroundingSample> load_grounding(const std::filesystem::path& path);

// Sorted unique caption tokens.
std::vector<std::string> vocabulary(const std::vector<Record>& records);

}  // namespace gbs::manifest
