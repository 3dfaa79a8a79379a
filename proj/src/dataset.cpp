#include "tdnet/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace tdnet {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<CaseEntry> DatasetManifest::split(const std::string& name) const {
  std::vector<CaseEntry> out;
  for (const auto& c : cases)
    if (c.split == name) out.push_back(c);
  return out;
}

std::string DatasetManifest::resolve(const std::string& relative) const {
  if (relative.empty()) return {};
  return (fs::path(root) / relative).string();
}

DatasetManifest load_manifest(const std::string& path) {
  fs::path p(path);
  if (fs::is_directory(p)) p /= "manifest.json";
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open manifest " + p.string());
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("malformed manifest " + p.string() + ": " + e.what());
  }

  DatasetManifest m;
  m.root = p.parent_path().string();
  if (m.root.empty()) m.root = ".";
  if (!j.contains("num_classes") || !j["num_classes"].is_number_integer())
    throw std::runtime_error("manifest is missing integer field num_classes");
  m.num_classes = j["num_classes"].get<int>();
  if (!j.contains("cases") || !j["cases"].is_array())
    throw std::runtime_error("manifest is missing array field cases");
  for (const auto& jc : j["cases"]) {
    CaseEntry c;
    c.id = jc.value("id", "");
    c.image = jc.value("image", "");
    c.labels = jc.value("labels", "");
    c.scribbles = jc.value("scribbles", "");
    c.split = jc.value("split", "");
    if (c.id.empty() || c.image.empty())
      throw std::runtime_error("manifest case entries need id and image fields");
    if (c.split != "train" && c.split != "val" && c.split != "test")
      throw std::runtime_error("case " + c.id + " has unknown split '" + c.split + "'");
    m.cases.push_back(std::move(c));
  }
  return m;
}

void save_manifest(const DatasetManifest& m, const std::string& dir) {
  json j;
  j["num_classes"] = m.num_classes;
  j["cases"] = json::array();
  for (const auto& c : m.cases) {
    json jc;
    jc["id"] = c.id;
    jc["image"] = c.image;
    if (!c.labels.empty()) jc["labels"] = c.labels;
    if (!c.scribbles.empty()) jc["scribbles"] = c.scribbles;
    jc["split"] = c.split;
    j["cases"].push_back(std::move(jc));
  }
  const fs::path p = fs::path(dir) / "manifest.json";
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write manifest " + p.string());
  out << j.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed writing manifest " + p.string());
}

}  // namespace tdnet
