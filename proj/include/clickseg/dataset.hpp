// Copyright 2026 The clickseg Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// On-disk dataset layout:
//
//   root/manifest.json
//   root/{case_id}/{slice_index}.img   float32 little-endian, row-major
//   root/{case_id}/{slice_index}.lbl   uint8 labels, row-major
//   root/{case_id}/{slice_index}.json  sidecar {width, height, spacing_mm,
//                                       dtype, structures, case_id, slice_index}
//
// The manifest lists cases with their slice indices, named splits
// (train/val/test) and optional cross-validation folds.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "clickseg/data.hpp"

namespace clickseg {

namespace fs = std::filesystem;

inline constexpr int kSampleFormatVersion = 1;

namespace detail {

inline std::vector<char> read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open " + p.string());
  return std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

inline void write_file(const fs::path& p, const void* data, std::size_t n) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + p.string() + " for writing");
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw DataError("failed writing " + p.string());
}

inline fs::path with_suffix(const fs::path& stem, const char* ext) {
  fs::path p = stem;
  p += ext;
  return p;
}

}  // namespace detail

static_assert(std::endian::native == std::endian::little, "raw sample blobs assume a little-endian host");

inline nlohmann::json sample_sidecar(const Sample& s) {
  nlohmann::json structures = nlohmann::json::array();
  for (const auto& st : s.structures) structures.push_back({{"label", st.label}, {"name", st.name}});
  return {
      {"format_version", kSampleFormatVersion},
      {"width", s.image.width()},
      {"height", s.image.height()},
      {"spacing_mm", {s.spacing().x, s.spacing().y}},
      {"dtype", {{"image", "float32"}, {"label", "uint8"}}},
      {"case_id", s.case_id},
      {"slice_index", s.slice_index},
      {"structures", structures},
  };
}

// Writes stem.img, stem.lbl and stem.json.
inline void write_sample(const Sample& s, const fs::path& stem) {
  s.validate();
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  const auto img = s.image.values();
  detail::write_file(detail::with_suffix(stem, ".img"), img.data(), img.size() * sizeof(float));
  const auto lbl = s.label.values();
  detail::write_file(detail::with_suffix(stem, ".lbl"), lbl.data(), lbl.size());
  const std::string meta = sample_sidecar(s).dump(2);
  detail::write_file(detail::with_suffix(stem, ".json"), meta.data(), meta.size());
}

inline Sample read_sample(const fs::path& stem) {
  const auto meta_path = detail::with_suffix(stem, ".json");
  if (!fs::exists(meta_path)) throw DataError("missing metadata: " + meta_path.string());
  nlohmann::json meta;
  try {
    const auto text = detail::read_file(meta_path);
    meta = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad metadata " + meta_path.string() + ": " + e.what());
  }
  Sample s;
  int width = 0, height = 0;
  Spacing spacing;
  try {
    width = meta.at("width").get<int>();
    height = meta.at("height").get<int>();
    const auto& sp = meta.at("spacing_mm");
    spacing = Spacing{sp.at(0).get<double>(), sp.at(1).get<double>()};
    if (meta.at("dtype").at("image") != "float32" || meta.at("dtype").at("label") != "uint8") {
      throw DataError("unsupported dtype in " + meta_path.string());
    }
    s.case_id = meta.value("case_id", stem.parent_path().filename().string());
    s.slice_index = meta.value("slice_index", 0);
    for (const auto& st : meta.value("structures", nlohmann::json::array())) {
      s.structures.push_back({st.at("label").get<int>(), st.at("name").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad metadata " + meta_path.string() + ": " + e.what());
  }
  if (width < 1 || height < 1) throw DataError("bad dimensions in " + meta_path.string());
  const std::size_t n = static_cast<std::size_t>(width) * height;

  const auto img = detail::read_file(detail::with_suffix(stem, ".img"));
  if (img.size() != n * sizeof(float)) throw DataError("image blob size mismatch for " + stem.string());
  std::vector<float> values(n);
  std::memcpy(values.data(), img.data(), img.size());
  const auto lbl = detail::read_file(detail::with_suffix(stem, ".lbl"));
  if (lbl.size() != n) throw DataError("label blob size mismatch for " + stem.string());
  std::vector<std::uint8_t> labels(lbl.begin(), lbl.end());

  try {
    s.image = Grid2D(width, height, std::move(values), spacing);
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("bad image: ") + e.what());
  }
  s.label = LabelMap(width, height, std::move(labels));
  s.validate();
  return s;
}

struct SliceRef {
  std::string case_id;
  int slice_index = 0;

  std::string id() const { return case_id + ":" + std::to_string(slice_index); }
  friend auto operator<=>(const SliceRef&, const SliceRef&) = default;
};

inline SliceRef parse_slice_ref(const std::string& id) {
  const auto colon = id.rfind(':');
  if (colon == std::string::npos || colon == 0) throw DataError("bad slice id '" + id + "' (expected case:index)");
  try {
    return SliceRef{id.substr(0, colon), std::stoi(id.substr(colon + 1))};
  } catch (const std::exception&) {
    throw DataError("bad slice id '" + id + "' (expected case:index)");
  }
}

struct Manifest {
  std::map<std::string, std::vector<int>> cases;
  std::map<std::string, std::vector<std::string>> splits;
  std::vector<std::vector<std::string>> folds;

  std::vector<SliceRef> slices_of(const std::vector<std::string>& case_ids) const {
    std::vector<SliceRef> out;
    for (const auto& c : case_ids) {
      auto it = cases.find(c);
      if (it == cases.end()) throw DataError("manifest: unknown case " + c);
      for (int i : it->second) out.push_back({c, i});
    }
    return out;
  }

  std::vector<SliceRef> all_slices() const {
    std::vector<SliceRef> out;
    for (const auto& [c, idx] : cases) {
      for (int i : idx) out.push_back({c, i});
    }
    return out;
  }

  // Cases of a named split; with a fold, "test" is that fold and "train" is
  // every other fold.
  std::vector<std::string> cases_for(const std::string& split, std::optional<int> fold = std::nullopt) const {
    if (fold) {
      if (*fold < 0 || *fold >= static_cast<int>(folds.size())) {
        throw DataError("manifest: fold " + std::to_string(*fold) + " out of range (" + std::to_string(folds.size()) +
                        " folds)");
      }
      if (split == "test") return folds[static_cast<std::size_t>(*fold)];
      if (split == "train") {
        std::vector<std::string> out;
        for (std::size_t f = 0; f < folds.size(); ++f) {
          if (static_cast<int>(f) == *fold) continue;
          out.insert(out.end(), folds[f].begin(), folds[f].end());
        }
        return out;
      }
    }
    auto it = splits.find(split);
    if (it == splits.end()) throw DataError("manifest: no split named " + split);
    return it->second;
  }
};

inline nlohmann::json to_json(const Manifest& m) {
  nlohmann::json cases = nlohmann::json::object();
  for (const auto& [c, idx] : m.cases) cases[c] = idx;
  nlohmann::json splits = nlohmann::json::object();
  for (const auto& [s, ids] : m.splits) splits[s] = ids;
  return {{"format_version", kSampleFormatVersion}, {"cases", cases}, {"splits", splits}, {"folds", m.folds}};
}

inline Manifest manifest_from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    for (const auto& [c, idx] : j.at("cases").items()) m.cases[c] = idx.get<std::vector<int>>();
    const auto splits = j.value("splits", nlohmann::json::object());
    for (const auto& [s, ids] : splits.items()) {
      m.splits[s] = ids.get<std::vector<std::string>>();
    }
    m.folds = j.value("folds", std::vector<std::vector<std::string>>{});
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }
  return m;
}

inline Manifest read_manifest(const fs::path& root) {
  const auto path = root / "manifest.json";
  if (!fs::exists(path)) throw DataError("missing manifest: " + path.string());
  const auto text = detail::read_file(path);
  try {
    return manifest_from_json(nlohmann::json::parse(text.begin(), text.end()));
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad manifest: ") + e.what());
  }
}

inline void write_manifest(const Manifest& m, const fs::path& root) {
  fs::create_directories(root);
  const std::string text = to_json(m).dump(2);
  detail::write_file(root / "manifest.json", text.data(), text.size());
}

inline fs::path sample_stem(const fs::path& root, const SliceRef& ref) {
  return root / ref.case_id / std::to_string(ref.slice_index);
}

inline std::vector<Sample> load_slices(const fs::path& root, const std::vector<SliceRef>& refs) {
  std::vector<Sample> out;
  out.reserve(refs.size());
  for (const auto& r : refs) out.push_back(read_sample(sample_stem(root, r)));
  return out;
}

// Assigns whole cases to splits in order (train, val, test) and round-robin
// to `fold_count` folds.
inline Manifest build_manifest(std::span<const Sample> samples, int val_cases, int test_cases, int fold_count) {
  Manifest m;
  std::vector<std::string> order;
  for (const auto& s : samples) {
    auto& idx = m.cases[s.case_id];
    if (idx.empty()) order.push_back(s.case_id);
    idx.push_back(s.slice_index);
  }
  const int n = static_cast<int>(order.size());
  if (val_cases < 0 || test_cases < 0 || val_cases + test_cases >= n) {
    throw DataError("build_manifest: split sizes leave no training cases");
  }
  const int train_cases = n - val_cases - test_cases;
  for (int i = 0; i < n; ++i) {
    const char* split = i < train_cases ? "train" : (i < train_cases + val_cases ? "val" : "test");
    m.splits[split].push_back(order[static_cast<std::size_t>(i)]);
  }
  if (fold_count > 0) {
    m.folds.resize(static_cast<std::size_t>(fold_count));
    for (int i = 0; i < n; ++i) m.folds[static_cast<std::size_t>(i % fold_count)].push_back(order[static_cast<std::size_t>(i)]);
  }
  return m;
}

inline void write_dataset(std::span<const Sample> samples, const Manifest& m, const fs::path& root) {
  for (const auto& s : samples) write_sample(s, sample_stem(root, {s.case_id, s.slice_index}));
  write_manifest(m, root);
}

}  // namespace clickseg
