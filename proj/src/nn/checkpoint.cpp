// SPDX-License-Identifier: Apache-2.0
#include "dstyle/nn/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <istream>
#include <json.hpp>
#include <ostream>

#include "dstyle/error.hpp"

namespace dstyle::nn {

namespace {

constexpr char kMagic[4] = {'D', 'P', 'N', 'N'};
constexpr std::uint16_t kVersion = 1;

void put_u64(std::ostream& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::istream& in, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) {
    const int c = in.get();
    if (c == std::char_traits<char>::eof()) throw DataError("truncated checkpoint");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

void save_checkpoint(std::ostream& out, const ParameterStore& store) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& [name, p] : store.items()) {
    manifest.push_back({{"name", name}, {"shape", p.value.shape()}, {"trainable", p.trainable}});
  }
  const std::string text = manifest.dump();
  out.write(kMagic, 4);
  put_u64(out, kVersion, 2);
  put_u64(out, text.size(), 4);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, p] : store.items())
    for (double v : p.value.values()) put_u64(out, std::bit_cast<std::uint64_t>(v), 8);
}

void load_checkpoint(std::istream& in, ParameterStore& store) {
  char magic[4] = {};
  in.read(magic, 4);
  if (in.gcount() != 4 || !std::equal(magic, magic + 4, kMagic)) throw DataError("not a DPNN checkpoint");
  if (get_u64(in, 2) != kVersion) throw DataError("unsupported checkpoint version");
  const auto len = get_u64(in, 4);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::uint64_t>(in.gcount()) != len) throw DataError("truncated checkpoint");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad checkpoint manifest: ") + e.what());
  }
  if (manifest.size() != store.items().size()) throw ShapeError("checkpoint parameter count mismatch");
  for (const auto& entry : manifest) {
    const auto name = entry.at("name").get<std::string>();
    if (!store.contains(name)) throw ShapeError("checkpoint has unknown parameter " + name);
    if (entry.at("shape").get<Shape>() != store.at(name).value.shape()) {
      throw ShapeError("checkpoint shape mismatch for " + name);
    }
  }
  for (const auto& entry : manifest) {
    auto& p = store.at(entry.at("name").get<std::string>());
    for (double& v : p.value.values()) v = std::bit_cast<double>(get_u64(in, 8));
  }
}

}  // namespace dstyle::nn
