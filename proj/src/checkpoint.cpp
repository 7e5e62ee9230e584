// SPDX-License-Identifier: Apache-2.0
#include "blora/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "blora/error.hpp"

namespace blora {

namespace {

void push_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void push_f64(std::vector<std::uint8_t>& out, double v) {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::string str(std::uint32_t len) {
    need(len);
    std::string s(reinterpret_cast<const char*>(bytes_.data()) + pos_, len);
    pos_ += len;
    return s;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw IoError("checkpoint truncated");
  }

  const std::vector<std::uint8_t>& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_params(const ParamStore& params) {
  std::vector<std::uint8_t> out;
  push_u32(out, kCheckpointMagic);
  push_u32(out, kCheckpointVersion);
  const std::string schema = kCheckpointSchema;
  push_u32(out, static_cast<std::uint32_t>(schema.size()));
  out.insert(out.end(), schema.begin(), schema.end());
  push_u32(out, static_cast<std::uint32_t>(params.names().size()));
  for (const std::string& name : params.names()) {
    const Matrix& m = params.at(name);
    push_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    push_u32(out, static_cast<std::uint32_t>(m.rows()));
    push_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) push_f64(out, m(i, j));
  }
  return out;
}

ParamStore deserialize_params(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  if (in.u32() != kCheckpointMagic) throw IoError("not a checkpoint file");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  const std::string schema = in.str(in.u32());
  if (schema != kCheckpointSchema) throw IoError("unknown checkpoint schema: " + schema);
  const std::uint32_t count = in.u32();
  ParamStore store;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = in.str(in.u32());
    const int rows = static_cast<int>(in.u32());
    const int cols = static_cast<int>(in.u32());
    if (rows < 0 || cols < 0 || static_cast<long long>(rows) * cols > (1ll << 32))
      throw IoError("implausible tensor shape in checkpoint");
    Matrix m(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) m(i, j) = in.f64();
    store.add(name, std::move(m));
  }
  if (!in.done()) throw IoError("trailing bytes after checkpoint payload");
  return store;
}

void save_checkpoint(const std::string& path, const ParamStore& params) {
  const std::vector<std::uint8_t> bytes = serialize_params(params);
  const std::filesystem::path target(path);
  const std::filesystem::path tmp = target.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw IoError("cannot finalize " + target.string() + ": " + ec.message());
}

ParamStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize_params(bytes);
}

void restore_into(ParamStore& dst, const ParamStore& src) {
  if (dst.names().size() != src.names().size())
    throw ParameterError("checkpoint holds " + std::to_string(src.names().size()) +
                         " tensors, the model expects " +
                         std::to_string(dst.names().size()));
  for (const std::string& name : dst.names()) {
    if (!src.has(name)) throw ParameterError("checkpoint is missing tensor: " + name);
    const Matrix& from = src.at(name);
    Matrix& to = dst.at(name);
    if (from.rows() != to.rows() || from.cols() != to.cols())
      throw ParameterError("checkpoint shape mismatch for tensor: " + name);
    to = from;
  }
}

}  // namespace blora
