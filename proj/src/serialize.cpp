// Copyright 2026 The cmst Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmst/serialize.hpp"

#include "cmst/error.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace cmst {

namespace fs = std::filesystem;
using nlohmann::json;
using nn::LayerKind;
using nn::LayerSpec;

namespace {

constexpr char kMagic[8] = {'C', 'M', 'S', 'T', 'N', 'E', 'T', '\0'};

static_assert(std::endian::native == std::endian::little, "parameter files assume a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
bool get(std::istream& is, T& v) {
  return static_cast<bool>(is.read(reinterpret_cast<char*>(&v), sizeof v));
}

json shapes_json(const std::vector<nn::Tensor>& ts) {
  json out = json::array();
  for (const auto& t : ts)
    out.push_back(t.shape());
  return out;
}

} // namespace

json to_json(const nn::Architecture& arch) {
  json layers = json::array();
  for (const auto& l : arch.layers) {
    json j = {{"kind", nn::to_string(l.kind)}};
    switch (l.kind) {
    case LayerKind::conv1d:
      j["filters"] = l.filters;
      j["kernel"] = l.kernel;
      j["stride"] = l.stride;
      j["padding"] = l.padding;
      break;
    case LayerKind::maxpool1d:
      j["pool"] = l.pool;
      break;
    case LayerKind::dropout:
      j["p"] = l.dropout;
      break;
    case LayerKind::dense:
      j["units"] = l.units;
      j["bias"] = l.bias;
      break;
    default:
      break;
    }
    layers.push_back(std::move(j));
  }
  return {{"input", {{"channels", arch.input.channels}, {"length", arch.input.length}}}, {"layers", layers}};
}

nn::Architecture architecture_from_json(const json& j) {
  try {
    nn::Architecture a;
    a.input.channels = j.at("input").at("channels").get<std::size_t>();
    a.input.length = j.at("input").at("length").get<std::size_t>();
    for (const auto& l : j.at("layers")) {
      LayerSpec s;
      s.kind = nn::layer_kind_from_string(l.at("kind").get<std::string>());
      s.filters = l.value("filters", s.filters);
      s.kernel = l.value("kernel", s.kernel);
      s.stride = l.value("stride", s.stride);
      s.padding = l.value("padding", s.padding);
      s.pool = l.value("pool", s.pool);
      s.dropout = l.value("p", s.dropout);
      s.units = l.value("units", s.units);
      s.bias = l.value("bias", s.bias);
      s.validate();
      a.layers.push_back(s);
    }
    return a;
  } catch (const json::exception& e) {
    throw DataError(std::string("architecture: ") + e.what());
  }
}

void write_network(std::ostream& os, const nn::Network& net, const json& meta) {
  json tensors = json::array();
  for (const auto& l : net.layers)
    tensors.push_back({{"trainable", shapes_json(l.trainable)}, {"running", shapes_json(l.running)}});
  const std::string header =
      json{{"architecture", to_json(net.arch)}, {"tensors", tensors}, {"meta", meta}}.dump();
  os.write(kMagic, sizeof kMagic);
  put<std::uint32_t>(os, kNetworkFormatVersion);
  put<std::uint64_t>(os, header.size());
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& l : net.layers) {
    for (const auto* group : {&l.trainable, &l.running})
      for (const auto& t : *group)
        os.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
}

nn::Network read_network(std::istream& is, const std::string& source, json* meta) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
    throw DataError(source + ": not a cmst network file");
  std::uint32_t version = 0;
  std::uint64_t header_len = 0;
  if (!get(is, version) || !get(is, header_len))
    throw DataError(source + ": truncated header");
  if (version != kNetworkFormatVersion)
    throw DataError(source + ": unsupported format version " + std::to_string(version));
  if (header_len > (std::uint64_t{1} << 30))
    throw DataError(source + ": header length out of range");
  std::string header(header_len, '\0');
  if (!is.read(header.data(), static_cast<std::streamsize>(header_len)))
    throw DataError(source + ": truncated header");

  nn::Network net;
  try {
    const json h = json::parse(header);
    net.arch = architecture_from_json(h.at("architecture"));
    net.arch.shapes();
    const auto& tensors = h.at("tensors");
    if (tensors.size() != net.arch.layers.size())
      throw DataError(source + ": tensor table does not match the architecture");
    // Allocate the reference layout and check the stored shapes against it.
    net = nn::init_network(net.arch, 0, nn::Init::fan_in_uniform);
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
      if (tensors[i].at("trainable") != shapes_json(net.layers[i].trainable) ||
          tensors[i].at("running") != shapes_json(net.layers[i].running))
        throw DataError(source + ": tensor shapes of layer " + std::to_string(i) + " do not match");
    }
    if (meta)
      *meta = h.value("meta", json::object());
  } catch (const json::exception& e) {
    throw DataError(source + ": " + e.what());
  } catch (const ShapeError& e) {
    throw DataError(source + ": " + e.what());
  }
  for (auto& l : net.layers) {
    for (auto* group : {&l.trainable, &l.running})
      for (auto& t : *group)
        if (!is.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double))))
          throw DataError(source + ": truncated parameter payload");
  }
  if (is.peek() != std::char_traits<char>::eof())
    throw DataError(source + ": trailing bytes after parameters");
  return net;
}

void save_network(const fs::path& file, const nn::Network& net, const json& meta) {
  std::ofstream os(file, std::ios::binary);
  if (!os)
    throw IoError("cannot write " + file.string());
  write_network(os, net, meta);
  if (!os)
    throw IoError("write failed: " + file.string());
}

nn::Network load_network(const fs::path& file, json* meta) {
  std::ifstream is(file, std::ios::binary);
  if (!is)
    throw IoError("cannot read " + file.string());
  return read_network(is, file.string(), meta);
}

void write_text_file(const fs::path& file, std::string_view text) {
  std::ofstream os(file, std::ios::binary);
  if (!os)
    throw IoError("cannot write " + file.string());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os)
    throw IoError("write failed: " + file.string());
}

std::string read_text_file(const fs::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is)
    throw IoError("cannot read " + file.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

json read_json_file(const fs::path& file) {
  const std::string text = read_text_file(file);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(file.string() + ": " + e.what());
  }
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string hash_tree(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file())
      files.push_back(fs::relative(e.path(), dir));
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a("");
  for (const auto& f : files) {
    const std::string name = f.generic_string();
    h = fnv1a(name, h);
    h = fnv1a(std::string_view("\0", 1), h);
    h = fnv1a(read_text_file(dir / f), h);
  }
  return hex64(h);
}

} // namespace cmst
