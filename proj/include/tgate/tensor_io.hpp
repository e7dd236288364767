#pragma once

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "tgate/tensor.hpp"

namespace tgate {

// Tensor dump: `<stem>.f32` holds raw little-endian f32 in row-major order,
// `<stem>.json` holds {"shape":[...],"dtype":"f32","order":"row-major"}.

inline nlohmann::json tensor_sidecar(const Tensor& t) {
  nlohmann::json j;
  j["shape"] = t.shape();
  j["dtype"] = "f32";
  j["order"] = "row-major";
  return j;
}

inline void write_tensor(const std::filesystem::path& stem, const Tensor& t) {
  static_assert(std::endian::native == std::endian::little, "dump format is little-endian");
  auto raw = stem;
  raw += ".f32";
  auto meta = stem;
  meta += ".json";
  {
    std::ofstream out(raw, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + raw.string());
    out.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  std::ofstream out(meta, std::ios::trunc);
  if (!out) throw Error("cannot write " + meta.string());
  out << tensor_sidecar(t).dump() << '\n';
}

inline Tensor read_tensor(const std::filesystem::path& stem) {
  auto raw = stem;
  raw += ".f32";
  auto meta = stem;
  meta += ".json";
  std::ifstream min(meta);
  if (!min) throw Error("cannot read " + meta.string());
  const auto j = nlohmann::json::parse(min);
  if (j.at("dtype") != "f32" || j.at("order") != "row-major")
    throw Error("unsupported tensor sidecar in " + meta.string());
  Shape shape = j.at("shape").get<Shape>();
  std::vector<float> data(shape_numel(shape));
  std::ifstream rin(raw, std::ios::binary);
  if (!rin) throw Error("cannot read " + raw.string());
  rin.read(reinterpret_cast<char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(float)));
  if (rin.gcount() != static_cast<std::streamsize>(data.size() * sizeof(float)))
    throw Error("truncated tensor payload in " + raw.string());
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace tgate
