// SPDX-License-Identifier: Apache-2.0
#include "bdmae/dataset_io.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

#include "bdmae/image_io.hpp"

namespace bdmae {

namespace {

using nlohmann::json;

std::string numbered(const char* split, std::size_t i) {
  char name[32];
  std::snprintf(name, sizeof name, "%s/%05zu.ppm", split, i);
  return name;
}

int read_label(const json& item, const char* key, std::size_t index) {
  const auto it = item.find(key);
  if (it == item.end() || !it->is_number_integer() || it->get<long long>() < 0 ||
      it->get<long long>() > 1'000'000) {
    throw DataError("manifest item " + std::to_string(index) + ": '" + key +
                    "' must be a non-negative integer");
  }
  return static_cast<int>(it->get<long long>());
}

}  // namespace

void export_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::error_code ec;
  for (const char* split : {"clean", "triggered"}) {
    std::filesystem::create_directories(dir / split, ec);
    if (ec) throw IoError("cannot create '" + (dir / split).string() + "': " + ec.message());
  }
  json items = json::array();
  for (std::size_t i = 0; i < dataset.clean.size(); ++i) {
    const std::string file = numbered("clean", i);
    write_ppm(dir / file, dataset.clean[i].image);
    items.push_back({{"file", file}, {"label", dataset.clean[i].label.id}, {"target", nullptr}});
  }
  for (std::size_t i = 0; i < dataset.triggered.size(); ++i) {
    const auto& item = dataset.triggered[i];
    const std::string file = numbered("triggered", i);
    write_ppm(dir / file, item.image);
    items.push_back({{"file", file}, {"label", item.label.id}, {"target", item.target.id}});
  }
  write_file_atomic(dir / "manifest.json", json{{"items", items}}.dump(2) + "\n");
}

Dataset import_dataset(const std::filesystem::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw IoError("cannot open manifest '" + manifest.string() + "'");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const json doc = json::parse(text, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) throw DataError("manifest '" + manifest.string() + "' is not JSON");
  const auto items = doc.find("items");
  if (!doc.is_object() || items == doc.end() || !items->is_array()) {
    throw DataError("manifest must be an object with an 'items' array");
  }
  if (items->empty()) throw DataError("manifest '" + manifest.string() + "' has no items");

  const std::filesystem::path base = manifest.parent_path();
  Dataset data;
  std::size_t index = 0;
  for (const json& item : *items) {
    if (!item.is_object()) throw DataError("manifest item " + std::to_string(index) + " is not an object");
    const auto file = item.find("file");
    if (file == item.end() || !file->is_string() || file->get_ref<const std::string&>().empty()) {
      throw DataError("manifest item " + std::to_string(index) + ": 'file' must be a path");
    }
    std::filesystem::path path(file->get<std::string>());
    if (path.is_relative()) path = base / path;
    const Label label{read_label(item, "label", index)};
    const auto target = item.find("target");
    Image image = read_ppm(path);
    if (target == item.end() || target->is_null()) {
      data.clean.push_back({std::move(image), label});
    } else {
      const Label t{read_label(item, "target", index)};
      data.triggered.push_back({std::move(image), label, t, PixelMask{}});
    }
    ++index;
  }
  return data;
}

}  // namespace bdmae
