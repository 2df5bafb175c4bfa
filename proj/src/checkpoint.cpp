#include "fld/nn/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "fld/errors.hpp"

namespace fld::nn {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'D', 'C'};
constexpr std::uint32_t kVersion = 1;

static_assert(sizeof(float) == 4);

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
  nlohmann::ordered_json manifest = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : tensors) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = t->shape();
    entry["dtype"] = "f32";
    entry["offset"] = offset;
    manifest.push_back(std::move(entry));
    offset += static_cast<std::uint64_t>(t->size()) * sizeof(float);
  }
  const std::string header = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint: " + path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, static_cast<std::uint64_t>(header.size()));
  os.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& [name, t] : tensors)
    os.write(reinterpret_cast<const char*>(t->data()),
             static_cast<std::streamsize>(t->size() * sizeof(float)));
  if (!os) throw Error("failed writing checkpoint: " + path);
}

std::map<std::string, Tensor<float>> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParseError("cannot open checkpoint: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw ParseError("not a checkpoint file: " + path);
  std::uint32_t version = 0;
  read_pod(is, version);
  if (version != kVersion) throw ParseError("unsupported checkpoint version in " + path);
  std::uint64_t header_size = 0;
  read_pod(is, header_size);
  std::string header(header_size, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_size));
  if (!is) throw ParseError("truncated checkpoint header: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("bad checkpoint manifest in " + path + ": " + e.what());
  }

  const std::streampos payload_start = is.tellg();
  std::map<std::string, Tensor<float>> out;
  for (const auto& entry : manifest) {
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    const std::uint64_t offset = entry.at("offset").get<std::uint64_t>();
    if (entry.at("dtype").get<std::string>() != "f32")
      throw ParseError("unsupported dtype for tensor " + name + " in " + path);
    Tensor<float> t(shape);
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.size() * sizeof(float)));
    if (!is) throw ParseError("truncated payload for tensor " + name + " in " + path);
    out.emplace(name, std::move(t));
  }
  return out;
}

}  // namespace fld::nn
