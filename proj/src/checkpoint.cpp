#include "lfg/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "lfg/error.hpp"

namespace lfg {

namespace {

constexpr char kMagic[4] = {'L', 'F', 'G', 'C'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes_(b) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(bytes_.begin() + pos_, bytes_.begin() + pos_ + n);
    pos_ += n;
    return s;
  }
  void floats(std::vector<float>& out) {
    need(out.size() * 4);
    std::memcpy(out.data(), bytes_.data() + pos_, out.size() * 4);
    pos_ += out.size() * 4;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw_data("LFGC: truncated checkpoint");
  }
  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void Checkpoint::put(const std::string& name, const nn::Tensor& t) {
  Block b{name, t.shape(), {}};
  b.data.reserve(t.size());
  for (double v : t.values()) b.data.push_back(static_cast<float>(v));
  blocks.push_back(std::move(b));
}

void Checkpoint::put(const std::string& name, const std::vector<double>& v) {
  Block b{name, {1, static_cast<int>(v.size()), 1, 1}, {}};
  for (double x : v) b.data.push_back(static_cast<float>(x));
  blocks.push_back(std::move(b));
}

bool Checkpoint::has(const std::string& name) const {
  return std::any_of(blocks.begin(), blocks.end(), [&](const Block& b) { return b.name == name; });
}

const Checkpoint::Block& Checkpoint::get(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw_data("checkpoint: missing block '" + name + "'");
}

void Checkpoint::load_into(const std::string& name, nn::Tensor& t) const {
  const Block& b = get(name);
  if (!(b.shape == t.shape())) {
    throw_data("checkpoint: block '" + name + "' has shape " + b.shape.str() + ", expected " +
               t.shape().str());
  }
  for (std::size_t i = 0; i < b.data.size(); ++i) t[i] = b.data[i];
}

void Checkpoint::load_into(const std::string& name, std::vector<double>& v) const {
  const Block& b = get(name);
  if (b.data.size() != v.size()) throw_data("checkpoint: block '" + name + "' size mismatch");
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = b.data[i];
}

const std::string& Checkpoint::require(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end()) throw_data("checkpoint: missing config key '" + key + "'");
  return it->second;
}

std::vector<std::uint8_t> Checkpoint::encode() const {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kVersion);
  std::string text;
  for (const auto& [k, v] : config) text += k + "=" + v + "\n";
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  put_u32(out, static_cast<std::uint32_t>(blocks.size()));
  for (const auto& b : blocks) {
    put_u32(out, static_cast<std::uint32_t>(b.name.size()));
    out.insert(out.end(), b.name.begin(), b.name.end());
    put_u32(out, 4);
    put_u32(out, static_cast<std::uint32_t>(b.shape.n));
    put_u32(out, static_cast<std::uint32_t>(b.shape.c));
    put_u32(out, static_cast<std::uint32_t>(b.shape.h));
    put_u32(out, static_cast<std::uint32_t>(b.shape.w));
  }
  for (const auto& b : blocks) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(b.data.data());
    out.insert(out.end(), p, p + b.data.size() * 4);
  }
  return out;
}

Checkpoint Checkpoint::decode(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw_data("LFGC: bad magic");
  }
  Reader r(bytes);
  (void)r.str(4);
  const auto version = r.u32();
  if (version != kVersion) throw_data("LFGC: unsupported version " + std::to_string(version));
  Checkpoint ck;
  std::istringstream text(r.str(r.u32()));
  std::string line;
  while (std::getline(text, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    ck.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    Block b;
    b.name = r.str(r.u32());
    if (r.u32() != 4) throw_data("LFGC: block '" + b.name + "' rank must be 4");
    b.shape.n = static_cast<int>(r.u32());
    b.shape.c = static_cast<int>(r.u32());
    b.shape.h = static_cast<int>(r.u32());
    b.shape.w = static_cast<int>(r.u32());
    b.data.resize(b.shape.count());
    ck.blocks.push_back(std::move(b));
  }
  for (auto& b : ck.blocks) r.floats(b.data);
  if (!r.done()) throw_data("LFGC: trailing bytes");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = encode();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw_data("write failed: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  try {
    return decode(bytes);
  } catch (const Error& e) {
    throw_data(path.string() + ": " + e.what());
  }
}

}  // namespace lfg
