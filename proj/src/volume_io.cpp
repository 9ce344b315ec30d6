#include <bit>
#include <cstring>
#include <fstream>

#include "c2f/data.hpp"
#include "json.hpp"

namespace c2f {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "the .pvol payload is written in host byte order");

void save_volume(const fs::path& path, const Volume& v, const VolumeMeta& meta) {
  if (v.empty()) throw DataError("save_volume: empty volume for " + path.string());
  json h;
  h["format"] = "pvol";
  h["version"] = 1;
  h["shape"] = {v.depth, v.height, v.width};
  h["dtype"] = "float32";
  h["byte_order"] = "little";
  h["order"] = "z-major";
  h["role"] = meta.role;
  h["subject_id"] = meta.subject_id;
  h["drf"] = meta.drf;
  h["voxel_size_mm"] = meta.voxel_size_mm;

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  const std::string header = h.dump();
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.put('\n');
  out.write(reinterpret_cast<const char*>(v.voxels.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!out) throw DataError("write failed for " + path.string());
}

Volume load_volume(const fs::path& path, VolumeMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header) || in.eof()) throw FormatError(path.string() + ": missing header line");

  json h;
  try {
    h = json::parse(header);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }
  int d = 0, hh = 0, w = 0;
  try {
    if (h.at("format") != "pvol") throw FormatError(path.string() + ": not a pvol file");
    if (h.at("version").get<int>() != 1) {
      throw FormatError(path.string() + ": unsupported pvol version " + h.at("version").dump());
    }
    if (h.at("dtype") != "float32" || h.at("byte_order") != "little" || h.at("order") != "z-major") {
      throw FormatError(path.string() + ": only little-endian z-major float32 payloads are supported");
    }
    const auto shape = h.at("shape").get<std::vector<int>>();
    if (shape.size() != 3 || shape[0] < 1 || shape[1] < 1 || shape[2] < 1) {
      throw FormatError(path.string() + ": bad shape " + h.at("shape").dump());
    }
    d = shape[0];
    hh = shape[1];
    w = shape[2];
    if (meta) {
      meta->role = h.value("role", "");
      meta->subject_id = h.value("subject_id", "");
      meta->drf = h.value("drf", 1.0);
      meta->voxel_size_mm = h.value("voxel_size_mm", std::array<double, 3>{1.0, 1.0, 1.0});
    }
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": corrupt header: " + e.what());
  }

  const auto payload_start = static_cast<std::uintmax_t>(in.tellg());
  const std::uintmax_t actual = fs::file_size(path) - payload_start;
  const std::uintmax_t expected = static_cast<std::uintmax_t>(d) * hh * w * sizeof(float);
  if (actual != expected) {
    throw FormatError(path.string() + ": payload size mismatch, expected " + std::to_string(expected) +
                      " bytes, found " + std::to_string(actual));
  }
  Volume v(d, hh, w);
  in.read(reinterpret_cast<char*>(v.voxels.data()), static_cast<std::streamsize>(expected));
  if (!in) throw FormatError(path.string() + ": short read");
  return v;
}

}  // namespace c2f
