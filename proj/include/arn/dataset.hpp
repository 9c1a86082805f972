#pragma once

// Data contracts: JSONL scene manifests, the binary per-image feature
// store, vocabulary and attribute-frequency construction.

#include "arn/scene.hpp"
#include "arn/vocab.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

namespace arn {

static_assert(std::endian::native == std::endian::little,
              "feature store and checkpoint formats are little-endian");

// Manifest serialization has raw (uncounted) access to the evaluation-only
// ground-truth field.
struct ManifestIo {
  static nlohmann::json to_json(const Scene& scene) {
    nlohmann::json j;
    j["image_id"] = scene.image_id;
    j["width"] = scene.width;
    j["height"] = scene.height;
    nlohmann::json props = nlohmann::json::array();
    for (const auto& p : scene.proposals) {
      nlohmann::json jp;
      jp["id"] = p.id;
      jp["box"] = {p.box.x_tl, p.box.y_tl, p.box.x_br, p.box.y_br};
      jp["category"] = p.category;
      props.push_back(std::move(jp));
    }
    j["proposals"] = std::move(props);
    nlohmann::json queries = nlohmann::json::array();
    for (const auto& q : scene.queries) {
      nlohmann::json jq;
      jq["tokens"] = q.words;
      if (!q.attribute_words.empty()) jq["attributes"] = q.attribute_words;
      if (!q.template_tag.empty()) jq["template"] = q.template_tag;
      if (q.gt_.has_value()) jq["gt"] = *q.gt_;
      queries.push_back(std::move(jq));
    }
    j["queries"] = std::move(queries);
    return j;
  }

  static Scene from_json(const nlohmann::json& j) {
    Scene scene;
    scene.image_id = j.at("image_id").get<std::string>();
    scene.width = j.at("width").get<double>();
    scene.height = j.at("height").get<double>();
    for (const auto& jp : j.at("proposals")) {
      Proposal p;
      p.id = jp.at("id").get<int>();
      const auto& box = jp.at("box");
      p.box = Box{box.at(0).get<double>(), box.at(1).get<double>(),
                  box.at(2).get<double>(), box.at(3).get<double>()};
      p.category = jp.at("category").get<int>();
      scene.proposals.push_back(std::move(p));
    }
    for (const auto& jq : j.at("queries")) {
      QueryRecord q;
      q.words = jq.at("tokens").get<std::vector<std::string>>();
      if (jq.contains("attributes")) {
        q.attribute_words = jq.at("attributes").get<std::vector<std::string>>();
      }
      if (jq.contains("template")) {
        q.template_tag = jq.at("template").get<std::string>();
      }
      if (jq.contains("gt")) q.gt_ = jq.at("gt").get<int>();
      scene.queries.push_back(std::move(q));
    }
    return scene;
  }
};

/// One scene per line. Feature vectors live in the feature store, not here.
inline void write_manifest(const std::vector<Scene>& scenes,
                           const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_manifest: cannot open " + path);
  for (const auto& s : scenes) out << ManifestIo::to_json(s).dump() << '\n';
}

inline std::vector<Scene> load_manifest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_manifest: cannot open " + path);
  std::vector<Scene> scenes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Scene scene;
    try {
      scene = ManifestIo::from_json(nlohmann::json::parse(line));
    } catch (const std::exception& e) {
      throw std::runtime_error("load_manifest: " + path + " line " +
                               std::to_string(line_no) + ": " + e.what());
    }
    for (auto& q : scene.queries) {
      if (q.words.empty()) {
        throw std::runtime_error("load_manifest: " + path + " line " +
                                 std::to_string(line_no) +
                                 ": query with no tokens");
      }
      if (q.words.size() > static_cast<std::size_t>(kMaxQueryTokens)) {
        std::fprintf(stderr,
                     "warning: %s line %d: query truncated to %d tokens\n",
                     path.c_str(), line_no, kMaxQueryTokens);
        q.words.resize(static_cast<std::size_t>(kMaxQueryTokens));
      }
    }
    scenes.push_back(std::move(scene));
  }
  return scenes;
}

// ---------------------------------------------------------------------------
// Feature store: one binary record per image, "<image_id>.arnf" inside a
// directory. Record layout, all little-endian: magic "ARNF", u32 version,
// u32 proposal count, u32 feature dimension, then count*dim float32
// row-major values.

inline constexpr char kFeatureMagic[4] = {'A', 'R', 'N', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::string feature_record_path(const std::string& dir,
                                       const std::string& image_id) {
  return (std::filesystem::path(dir) / (image_id + ".arnf")).string();
}

inline void write_feature_record(const std::string& dir, const Scene& scene) {
  std::filesystem::create_directories(dir);
  const std::string path = feature_record_path(dir, scene.image_id);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_feature_record: cannot open " + path);
  const std::uint32_t count = static_cast<std::uint32_t>(scene.proposals.size());
  const std::uint32_t dim =
      count ? static_cast<std::uint32_t>(scene.proposals[0].subject_raw.size()) : 0;
  out.write(kFeatureMagic, 4);
  auto put_u32 = [&out](std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), 4);
  };
  put_u32(kFeatureVersion);
  put_u32(count);
  put_u32(dim);
  for (const auto& p : scene.proposals) {
    if (p.subject_raw.size() != dim) {
      throw std::runtime_error("write_feature_record: ragged feature rows in " +
                               scene.image_id);
    }
    out.write(reinterpret_cast<const char*>(p.subject_raw.data()),
              static_cast<std::streamsize>(sizeof(float) * dim));
  }
}

/// Fills each proposal's subject_raw from the image's record.
inline void read_feature_record(const std::string& dir, Scene& scene) {
  const std::string path = feature_record_path(dir, scene.image_id);
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("feature store: missing record for image id '" +
                             scene.image_id + "' (" + path + ")");
  }
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    throw std::runtime_error("feature store: bad magic in " + path);
  }
  auto get_u32 = [&in, &path] {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) throw std::runtime_error("feature store: truncated " + path);
    return v;
  };
  const std::uint32_t version = get_u32();
  if (version != kFeatureVersion) {
    throw std::runtime_error("feature store: unsupported version " +
                             std::to_string(version) + " in " + path);
  }
  const std::uint32_t count = get_u32();
  const std::uint32_t dim = get_u32();
  if (count != scene.proposals.size()) {
    throw std::runtime_error(
        "feature store: " + path + " holds " + std::to_string(count) +
        " rows but the manifest lists " +
        std::to_string(scene.proposals.size()) + " proposals");
  }
  for (auto& p : scene.proposals) {
    p.subject_raw.resize(dim);
    in.read(reinterpret_cast<char*>(p.subject_raw.data()),
            static_cast<std::streamsize>(sizeof(float) * dim));
    if (!in) throw std::runtime_error("feature store: truncated " + path);
  }
}

/// Manifest plus feature store, with invariant validation.
inline std::vector<Scene> load_dataset(const std::string& manifest_path,
                                       const std::string& features_dir) {
  std::vector<Scene> scenes = load_manifest(manifest_path);
  std::size_t dim = 0;
  for (auto& s : scenes) {
    read_feature_record(features_dir, s);
    s.validate();
    for (const auto& p : s.proposals) {
      if (dim == 0) dim = p.subject_raw.size();
      if (p.subject_raw.size() != dim) {
        throw std::runtime_error("load_dataset: feature dimension mismatch in " +
                                 s.image_id);
      }
    }
  }
  return scenes;
}

// ---------------------------------------------------------------------------

/// Tokens with corpus count >= min_count, ordered by descending count then
/// lexicographic; everything else maps to UNK.
inline Vocabulary build_vocabulary(const std::vector<Scene>& scenes,
                                   int min_count) {
  if (min_count < 1) {
    throw std::invalid_argument("build_vocabulary: min_count must be >= 1");
  }
  std::map<std::string, int> counts;
  for (const auto& s : scenes) {
    for (const auto& q : s.queries) {
      for (const auto& w : q.words) ++counts[w];
    }
  }
  std::vector<std::pair<std::string, int>> entries(counts.begin(), counts.end());
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<std::string> tokens;
  for (const auto& [token, count] : entries) {
    if (count >= min_count) tokens.push_back(token);
  }
  return Vocabulary(std::move(tokens));
}

/// Attribute inventory with reciprocal-frequency weights.
inline AttributeTable attribute_weights(const std::vector<Scene>& scenes) {
  std::map<std::string, int> counts;
  for (const auto& s : scenes) {
    for (const auto& q : s.queries) {
      for (const auto& a : q.attribute_words) ++counts[a];
    }
  }
  if (counts.empty()) {
    throw std::invalid_argument("attribute_weights: no attribute annotations");
  }
  AttributeTable table;
  for (const auto& [name, count] : counts) table.add(name, count);
  return table;
}

inline void save_attribute_table(const AttributeTable& table,
                                 const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_attribute_table: cannot open " + path);
  for (int i = 0; i < table.size(); ++i) {
    out << table.names[static_cast<std::size_t>(i)] << ' '
        << table.frequency[static_cast<std::size_t>(i)] << '\n';
  }
}

inline AttributeTable load_attribute_table(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_attribute_table: cannot open " + path);
  AttributeTable table;
  std::string name;
  int count = 0;
  while (in >> name >> count) table.add(name, count);
  return table;
}

/// Fills token_ids on every query (unknown words map to UNK).
inline void apply_vocabulary(std::vector<Scene>& scenes, const Vocabulary& vocab) {
  for (auto& s : scenes) {
    for (auto& q : s.queries) q.token_ids = vocab.encode(q.words);
  }
}

/// Fills attribute_ids; attributes absent from the table are dropped.
inline void apply_attribute_table(std::vector<Scene>& scenes,
                                  const AttributeTable& table) {
  for (auto& s : scenes) {
    for (auto& q : s.queries) {
      q.attribute_ids.clear();
      for (const auto& a : q.attribute_words) {
        const int id = table.id_of(a);
        if (id >= 0) q.attribute_ids.push_back(id);
      }
    }
  }
}

}  // namespace arn
