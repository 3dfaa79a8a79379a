#pragma once

#include <string>
#include <vector>

namespace tdnet {

struct CaseEntry {
  std::string id;
  std::string image;      // paths relative to the manifest's directory
  std::string labels;     // dense ground truth; may be empty
  std::string scribbles;  // may be empty for inference-only cases
  std::string split;      // "train", "val" or "test"
};

struct DatasetManifest {
  std::string root;  // directory holding manifest.json, set on load/save
  int num_classes = 0;
  std::vector<CaseEntry> cases;

  std::vector<CaseEntry> split(const std::string& name) const;
  std::string resolve(const std::string& relative) const;
};

/// Accepts either the manifest file itself or a dataset directory containing
/// manifest.json.
DatasetManifest load_manifest(const std::string& path);

void save_manifest(const DatasetManifest& m, const std::string& dir);

}  // namespace tdnet
