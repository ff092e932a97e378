#include "fox/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace fox {

namespace {

template <typename U>
void put(std::string& buf, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

class Reader {
 public:
  explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("checkpoint truncated");
  }

  std::string bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const std::vector<TensorRecord>& tensors) {
  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    if (t.name.size() > 0xFFFF) throw CheckpointError("tensor name too long: " + t.name);
    if (t.dtype != 0) throw CheckpointError("only f32 tensors can be written");
    put<std::uint16_t>(buf, static_cast<std::uint16_t>(t.name.size()));
    buf += t.name;
    put<std::uint8_t>(buf, t.dtype);
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(t.dims.size()));
    std::size_t n = 1;
    for (auto d : t.dims) {
      put<std::uint32_t>(buf, d);
      n *= d;
    }
    if (n != t.data.size()) throw CheckpointError("tensor " + t.name + " payload does not match dims");
    for (float f : t.data) put<std::uint32_t>(buf, std::bit_cast<std::uint32_t>(f));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("write failed: " + path.string());
}

std::vector<TensorRecord> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  Reader r(std::string(std::istreambuf_iterator<char>(in), {}));
  if (r.bytes(sizeof(kCheckpointMagic)) != std::string(kCheckpointMagic, sizeof(kCheckpointMagic))) {
    throw CheckpointError("bad checkpoint magic in " + path.string());
  }
  const auto count = r.get<std::uint32_t>();
  std::vector<TensorRecord> out;
  for (std::uint32_t k = 0; k < count; ++k) {
    TensorRecord t;
    t.name = r.bytes(r.get<std::uint16_t>());
    t.dtype = r.get<std::uint8_t>();
    if (t.dtype != 0) throw CheckpointError("unsupported dtype code " + std::to_string(t.dtype) + " for " + t.name);
    const auto ndim = r.get<std::uint8_t>();
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      t.dims.push_back(r.get<std::uint32_t>());
      n *= t.dims.back();
    }
    t.data.resize(n);
    for (auto& f : t.data) f = std::bit_cast<float>(r.get<std::uint32_t>());
    out.push_back(std::move(t));
  }
  if (!r.done()) throw CheckpointError("trailing bytes after the last tensor");
  return out;
}

void ckpt_save(const ModelParams<float>& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  std::vector<TensorRecord> recs;
  visit_model_params(params, cfg, [&](const std::string& name, const Matrix<float>& m, ParamInfo) {
    TensorRecord t;
    t.name = name;
    t.dims = {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())};
    t.data.assign(m.data(), m.data() + m.size());
    recs.push_back(std::move(t));
  });
  write_checkpoint(path, recs);
}

ModelParams<float> ckpt_load(const std::filesystem::path& path, const ModelConfig& cfg) {
  const auto recs = read_checkpoint(path);
  Rng rng(0);
  ModelParams<float> p = init_model_params<float>(cfg, rng);
  std::size_t i = 0;
  visit_model_params(p, cfg, [&](const std::string& name, Matrix<float>& m, ParamInfo) {
    if (i >= recs.size()) throw CheckpointError("checkpoint is missing tensor " + name);
    const TensorRecord& t = recs[i++];
    if (t.name != name) throw CheckpointError("expected tensor " + name + ", found " + t.name);
    if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint32_t>(m.rows()) ||
        t.dims[1] != static_cast<std::uint32_t>(m.cols())) {
      throw CheckpointError("dim mismatch for " + name + ": config expects " + shape_str(m.rows(), m.cols()));
    }
    std::memcpy(m.data(), t.data.data(), t.data.size() * sizeof(float));
  });
  if (i != recs.size()) throw CheckpointError("checkpoint has extra tensors");
  return p;
}

}  // namespace fox
