#include "resgate/io.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace resgate {

namespace {

constexpr char kMagic[4] = {'R', 'G', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xFF));
  out.push_back(static_cast<char>((v >> 8) & 0xFF));
  out.push_back(static_cast<char>((v >> 16) & 0xFF));
  out.push_back(static_cast<char>((v >> 24) & 0xFF));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  std::uint32_t u32() {
    if (pos_ + 4 > buf_.size()) fail("truncated");
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) |
          static_cast<std::uint8_t>(buf_[pos_ + static_cast<std::size_t>(i)]);
    }
    pos_ += 4;
    return v;
  }

  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, sizeof f);
    return f;
  }

  std::string bytes(std::size_t n) {
    if (pos_ + n > buf_.size()) fail("truncated");
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == buf_.size(); }

  [[noreturn]] void fail(const std::string& why) const {
    throw std::runtime_error("checkpoint " + path_ + ": " + why);
  }

 private:
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void atomic_write_file(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path dest(path);
  if (dest.has_parent_path()) fs::create_directories(dest.parent_path());
  const fs::path tmp = dest.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  fs::rename(tmp, dest);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_checkpoint(const std::string& path, const Model& model) {
  const ModelConfig& cfg = model.config();
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(cfg.n_layers));
  put_u32(out, static_cast<std::uint32_t>(cfg.hidden));
  put_u32(out, static_cast<std::uint32_t>(cfg.n_heads));
  put_u32(out, static_cast<std::uint32_t>(cfg.ff_dim));
  put_u32(out, static_cast<std::uint32_t>(cfg.vocab));
  put_u32(out, static_cast<std::uint32_t>(cfg.max_seq));
  put_u32(out, static_cast<std::uint32_t>(cfg.gate.shape));
  put_u32(out, static_cast<std::uint32_t>(cfg.gate.sharing));
  put_u32(out, static_cast<std::uint32_t>(cfg.gate.placement));
  put_u32(out, static_cast<std::uint32_t>(cfg.gate.arch));
  put_u32(out, static_cast<std::uint32_t>(cfg.gate.granularity));

  const auto& named = model.named_parameters();
  put_u32(out, static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.append(name);
    put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : t.data()) put_f32(out, static_cast<float>(v));
  }
  atomic_write_file(path, out);
}

Model load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r(buf, path);
  if (r.bytes(4) != std::string(kMagic, 4)) r.fail("bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    r.fail("unsupported version " + std::to_string(version) + " (expected " +
           std::to_string(kVersion) + ")");
  }
  ModelConfig cfg;
  cfg.n_layers = static_cast<int>(r.u32());
  cfg.hidden = static_cast<int>(r.u32());
  cfg.n_heads = static_cast<int>(r.u32());
  cfg.ff_dim = static_cast<int>(r.u32());
  cfg.vocab = static_cast<int>(r.u32());
  cfg.max_seq = static_cast<int>(r.u32());
  cfg.gate.shape = static_cast<GateShape>(r.u32());
  cfg.gate.sharing = static_cast<GateSharing>(r.u32());
  cfg.gate.placement = static_cast<GatePlacement>(r.u32());
  cfg.gate.arch = static_cast<GateArch>(r.u32());
  cfg.gate.granularity = static_cast<SkipGranularity>(r.u32());
  cfg.validate();

  Model model(cfg, 0);
  const auto& named = model.named_parameters();
  const std::uint32_t n_blobs = r.u32();
  if (n_blobs != named.size()) {
    r.fail("expected " + std::to_string(named.size()) + " parameter blobs, found " +
           std::to_string(n_blobs));
  }
  for (const auto& [name, t] : named) {
    const std::uint32_t name_len = r.u32();
    const std::string blob_name = r.bytes(name_len);
    if (blob_name != name) {
      r.fail("parameter order mismatch: expected '" + name + "', found '" +
             blob_name + "'");
    }
    const std::uint32_t ndims = r.u32();
    std::vector<int> dims(ndims);
    for (auto& d : dims) d = static_cast<int>(r.u32());
    if (dims != t.shape()) {
      r.fail("shape mismatch for '" + name + "': stored " + shape_str(dims) +
             ", expected " + shape_str(t.shape()));
    }
    Tensor tt = t;
    for (double& v : tt.data()) v = static_cast<double>(r.f32());
  }
  if (!r.done()) r.fail("trailing bytes after final blob");
  return model;
}

}  // namespace resgate
