// Copyright 2026 exsep authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include "exsep/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

namespace exsep {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

void put_u16(std::ostream& os, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xff), static_cast<char>(v >> 8)};
  os.write(b, 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(b, 4);
}

uint16_t get_u16(std::istream& is) {
  unsigned char b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) |
         (static_cast<uint32_t>(b[3]) << 24);
}

void write_record(std::ostream& os, const std::string& name,
                  const std::vector<int>& shape,
                  const std::vector<double>& data) {
  if (name.size() > 0xffff)
    throw ContractError("checkpoint: parameter name too long: " + name);
  if (shape.size() > 0xff)
    throw ContractError("checkpoint: rank exceeds u8 for " + name);
  put_u16(os, static_cast<uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  const char rank = static_cast<char>(shape.size());
  os.write(&rank, 1);
  for (int d : shape) put_u32(os, static_cast<uint32_t>(d));
  os.write(reinterpret_cast<const char*>(data.data()),
           static_cast<std::streamsize>(data.size() * sizeof(double)));
}

void save_impl(const std::string& path,
               const std::vector<std::pair<std::string, const Tensor*>>& items,
               const std::string& config_json) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("checkpoint: cannot open for writing: " + path);
  os.write("EXSP", 4);
  put_u32(os, kCheckpointVersion);
  const uint32_t count =
      static_cast<uint32_t>(items.size() + (config_json.empty() ? 0 : 1));
  put_u32(os, count);
  if (!config_json.empty()) {
    std::vector<double> bytes(config_json.size());
    for (size_t i = 0; i < config_json.size(); ++i)
      bytes[i] = static_cast<double>(static_cast<unsigned char>(config_json[i]));
    write_record(os, kConfigRecordName,
                 {static_cast<int>(config_json.size())}, bytes);
  }
  for (const auto& [name, t] : items) write_record(os, name, t->shape(), t->data());
  if (!os) throw DataError("checkpoint: write failed: " + path);
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamSet& params,
                     const std::string& config_json) {
  std::vector<std::pair<std::string, const Tensor*>> items;
  for (const auto& name : params.names()) items.emplace_back(name, &params.at(name));
  save_impl(path, items, config_json);
}

void save_checkpoint(const std::string& path,
                     const std::map<std::string, Tensor>& tensors,
                     const std::string& config_json) {
  std::vector<std::pair<std::string, const Tensor*>> items;
  for (const auto& [name, t] : tensors) items.emplace_back(name, &t);
  save_impl(path, items, config_json);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("checkpoint: cannot open: " + path);
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "EXSP", 4) != 0)
    throw DataError("checkpoint: bad magic in " + path);
  const uint32_t version = get_u32(is);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: unsupported version " +
                    std::to_string(version) + " in " + path);
  const uint32_t count = get_u32(is);

  Checkpoint ckpt;
  for (uint32_t r = 0; r < count; ++r) {
    const uint16_t name_len = get_u16(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    char rank_c = 0;
    is.read(&rank_c, 1);
    const int rank = static_cast<unsigned char>(rank_c);
    std::vector<int> shape(static_cast<size_t>(rank));
    long numel = 1;
    for (int i = 0; i < rank; ++i) {
      shape[static_cast<size_t>(i)] = static_cast<int>(get_u32(is));
      numel *= shape[static_cast<size_t>(i)];
    }
    std::vector<double> data(static_cast<size_t>(numel));
    is.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw DataError("checkpoint: truncated record " + name + " in " + path);
    if (name == kConfigRecordName) {
      std::string json(data.size(), '\0');
      for (size_t i = 0; i < data.size(); ++i)
        json[i] = static_cast<char>(static_cast<unsigned char>(data[i]));
      ckpt.config_json = std::move(json);
    } else {
      ckpt.tensors.emplace(name, Tensor::from_data(std::move(shape), std::move(data)));
    }
  }
  return ckpt;
}

}  // namespace exsep
