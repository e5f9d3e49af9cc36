#include <bit>
#include <cstring>
#include <fstream>

#include "rcan/config.hpp"
#include "rcan/error.hpp"
#include "rcan/train.hpp"

namespace rcan {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'R', 'C', 'A', 'N'};
constexpr std::uint32_t kVersion = 1;
// Guards against absurd lengths in corrupted files.
constexpr std::uint32_t kMaxName = 4096;
constexpr std::uint32_t kMaxRank = 8;

class Writer {
 public:
  template <typename V>
  void put(V v) {
    const auto* b = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), b, b + sizeof(V));
  }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const char*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void floats(std::span<const float> v) { bytes(v.data(), 4 * v.size()); }
  const std::vector<char>& buffer() const { return buf_; }

 private:
  std::vector<char> buf_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> b) : buf_(std::move(b)) {}
  template <typename V>
  V get() {
    V v;
    bytes(&v, sizeof(V));
    return v;
  }
  void bytes(void* out, std::size_t n) {
    require(n <= buf_.size() - pos_, ErrorCode::kBadCheckpoint, "checkpoint ends early");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::vector<float> floats(std::size_t n) {
    require(n <= (buf_.size() - pos_) / 4, ErrorCode::kBadCheckpoint, "checkpoint ends early");
    std::vector<float> v(n);
    bytes(v.data(), 4 * n);
    return v;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, const OptimizerState* opt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.put<std::uint32_t>(kVersion);
  const std::string cfg = to_json(model.config()).dump();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg.data(), cfg.size());
  const auto& params = model.parameters();
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name.data(), p.name.size());
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (auto e : p.value.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(e));
    w.floats(p.value.data());
  }
  w.put<std::uint8_t>(opt ? 1 : 0);
  if (opt) {
    require(opt->m.size() == params.size() && opt->v.size() == params.size(), ErrorCode::kShapeMismatch,
            "optimizer state does not match model");
    w.put<double>(opt->adam.beta1);
    w.put<double>(opt->adam.beta2);
    w.put<double>(opt->adam.eps);
    w.put<std::uint64_t>(opt->step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      require(opt->m[i].size() == params[i].value.size() && opt->v[i].size() == params[i].value.size(),
              ErrorCode::kShapeMismatch, "optimizer moment size mismatch for " + params[i].name);
      w.floats(opt->m[i]);
      w.floats(opt->v[i]);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  out.write(w.buffer().data(), static_cast<std::streamsize>(w.buffer().size()));
  require(out.good(), ErrorCode::kIoError, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIoError, "cannot open " + path.string());
  Reader r(std::vector<char>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()));

  char magic[4];
  r.bytes(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorCode::kBadCheckpoint, path.string() + ": not an RCAN checkpoint");
  const auto version = r.get<std::uint32_t>();
  require(version == kVersion, ErrorCode::kBadCheckpoint, "unsupported checkpoint version " + std::to_string(version));

  const auto cfg_len = r.get<std::uint32_t>();
  require(cfg_len < (1u << 20), ErrorCode::kBadCheckpoint, "config block too large");
  std::string cfg_text(cfg_len, '\0');
  r.bytes(cfg_text.data(), cfg_len);
  const Json cfg_json = Json::parse(cfg_text, nullptr, false);
  require(!cfg_json.is_discarded(), ErrorCode::kBadCheckpoint, "config block is not JSON");
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(cfg_json);
  } catch (const Error& e) {
    fail(ErrorCode::kBadCheckpoint, std::string("config block: ") + e.what());
  }

  const auto count = r.get<std::uint32_t>();
  std::vector<Parameter<float>> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    require(name_len <= kMaxName, ErrorCode::kBadCheckpoint, "parameter name too long");
    std::string name(name_len, '\0');
    r.bytes(name.data(), name_len);
    const auto rank = r.get<std::uint32_t>();
    require(rank >= 1 && rank <= kMaxRank, ErrorCode::kBadCheckpoint, name + ": bad rank");
    Shape shape;
    for (std::uint32_t a = 0; a < rank; ++a) {
      const auto e = r.get<std::uint32_t>();
      require(e >= 1, ErrorCode::kBadCheckpoint, name + ": zero extent");
      shape.push_back(e);
    }
    auto values = r.floats(static_cast<std::size_t>(numel(shape)));
    params.push_back({std::move(name), Tensor32(shape, std::move(values))});
  }

  Checkpoint ck{[&] {
                  try {
                    return Model<float>(cfg, std::move(params));
                  } catch (const Error& e) {
                    fail(ErrorCode::kBadCheckpoint, std::string("parameters: ") + e.what());
                  }
                }(),
                std::nullopt};

  if (r.get<std::uint8_t>() != 0) {
    OptimizerState s;
    s.adam.beta1 = r.get<double>();
    s.adam.beta2 = r.get<double>();
    s.adam.eps = r.get<double>();
    s.step = r.get<std::uint64_t>();
    for (const auto& p : ck.model.parameters()) {
      s.m.push_back(r.floats(p.value.size()));
      s.v.push_back(r.floats(p.value.size()));
    }
    ck.optimizer = std::move(s);
  }
  require(r.done(), ErrorCode::kBadCheckpoint, "trailing bytes after checkpoint");
  return ck;
}

}  // namespace rcan
