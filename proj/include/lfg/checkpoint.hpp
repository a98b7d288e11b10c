#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "lfg/nn/tensor.hpp"

namespace lfg {

// LFGC container: magic "LFGC", u32 format version, u32 length + config
// text (key=value lines), u32 block count, a manifest of (u32 name length,
// name, u32 rank = 4, 4 x u32 dims) entries, then the float32 payload of each
// block in manifest order. All integers little-endian.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  struct Block {
    std::string name;
    nn::Shape shape;
    std::vector<float> data;
  };

  std::map<std::string, std::string> config;
  std::vector<Block> blocks;

  void put(const std::string& name, const nn::Tensor& t);
  void put(const std::string& name, const std::vector<double>& v);
  const Block& get(const std::string& name) const;
  bool has(const std::string& name) const;
  // Copies a block into t; shapes must agree.
  void load_into(const std::string& name, nn::Tensor& t) const;
  void load_into(const std::string& name, std::vector<double>& v) const;

  const std::string& require(const std::string& key) const;

  std::vector<std::uint8_t> encode() const;
  static Checkpoint decode(const std::vector<std::uint8_t>& bytes);

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);
};

}  // namespace lfg
