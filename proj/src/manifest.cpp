#include "gbs/manifest.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

namespace gbs::manifest {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path resolve(const fs::path& path) {
  if (fs::exists(path) || path.is_absolute()) return path;
  if (const char* root = std::getenv(kDataRootEnv)) {
    fs::path candidate = fs::path(root) / path;
    if (fs::exists(candidate)) return candidate;
  }
  return path;
}

std::vector<Record> read(const fs::path& path) {
  const fs::path resolved = resolve(path);
  std::ifstream in(resolved);
  GBS_CHECK(in.good(), kIo, "cannot open manifest: " + resolved.string());
  std::vector<Record> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      Record r;
      r.id = j.at("id").get<std::string>();
      r.image = j.at("image").get<std::string>();
      r.caption = j.at("caption").get<std::string>();
      if (j.contains("phrases")) {
        for (const auto& p : j.at("phrases")) {
          PhraseRecord pr;
          pr.phrase = p.at("phrase").get<std::string>();
          for (const auto& b : p.at("boxes")) {
            GBS_CHECK(b.size() == 4, kData, "box needs 4 coordinates");
            pr.boxes.push_back({b[0].get<int>(), b[1].get<int>(), b[2].get<int>(), b[3].get<int>()});
          }
          r.phrases.push_back(std::move(pr));
        }
      }
      records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw Error(ErrorKind::kData,
                  resolved.string() + ":" + std::to_string(line_no) + ": malformed record: " + e.what());
    }
  }
  GBS_CHECK(!records.empty(), kData, "empty manifest: " + resolved.string());
  return records;
}

void write(const fs::path& path, const std::vector<Record>& records) {
  std::ofstream out(path);
  GBS_CHECK(out.good(), kIo, "cannot write manifest: " + path.string());
  for (const auto& r : records) {
    json j{{"id", r.id}, {"image", r.image}, {"caption", r.caption}};
    if (!r.phrases.empty()) {
      json phrases = json::array();
      for (const auto& p : r.phrases) {
        json boxes = json::array();
        for (const auto& b : p.boxes) boxes.push_back({b.x_min, b.y_min, b.x_max, b.y_max});
        phrases.push_back({{"phrase", p.phrase}, {"boxes", boxes}});
      }
      j["phrases"] = phrases;
    }
    out << j.dump() << "\n";
  }
}

std::vector<blend::ImageTextPair> load_pairs(const fs::path& path) {
  const fs::path base = resolve(path).parent_path();
  std::vector<blend::ImageTextPair> pairs;
  for (const auto& r : read(path)) {
    blend::ImageTextPair p;
    p.id = r.id;
    p.image = read_image(base / r.image);
    p.text = blend::tokenize(r.caption);
    GBS_CHECK(!p.text.empty(), kData, "record " + r.id + " has an empty caption");
    pairs.push_back(std::move(p));
  }
  return pairs;
}

std::vector<eval::GroundingSample> load_grounding(const fs::path& path) {
  const fs::path base = resolve(path).parent_path();
  std::vector<eval::GroundingSample> samples;
  for (const auto& r : read(path)) {
    GBS_CHECK(!r.phrases.empty(), kData, "record " + r.id + " has no grounding phrases");
    const Image image = read_image(base / r.image);
    for (std::size_t k = 0; k < r.phrases.size(); ++k) {
      const auto& p = r.phrases[k];
      GBS_CHECK(!p.boxes.empty(), kData, "phrase without boxes in record " + r.id);
      for (const auto& b : p.boxes)
        GBS_CHECK(b.x_min < b.x_max && b.y_min < b.y_max && b.x_min >= 0 && b.y_min >= 0 &&
                      b.x_max <= image.width() && b.y_max <= image.height(),
                  kData, "invalid box in record " + r.id);
      eval::GroundingSample s;
      s.id = r.id;
      s.phrase_index = static_cast<int>(k);
      s.image = image;
      s.phrase = blend::tokenize(p.phrase);
      s.gt_boxes = p.boxes;
      s.category = s.phrase.empty() ? "" : s.phrase.front();
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

std::vector<std::string> vocabulary(const std::vector<Record>& records) {
  std::set<std::string> words;
  for (const auto& r : records)
    for (const auto& t : blend::tokenize(r.caption)) words.insert(t);
  return {words.begin(), words.end()};
}

}  // namespace gbs::manifest
