#include "lami/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "lami/errors.hpp"

namespace lami {

namespace {

constexpr char kMagic[8] = {'L', 'A', 'M', 'I', 'C', 'K', 'P', 'T'};

template <typename T>
void put(std::ostream& out, T v) {
  unsigned char b[sizeof(T)];
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    std::memcpy(&bits, &v, sizeof(double));
  } else {
    bits = static_cast<std::uint64_t>(v);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(bits >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  unsigned char b[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw DataError("checkpoint-format", "truncated checkpoint");
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  if constexpr (std::is_same_v<T, double>) {
    double v = 0.0;
    std::memcpy(&v, &bits, sizeof(double));
    return v;
  } else {
    return static_cast<T>(bits);
  }
}

std::string get_bytes(std::istream& in, std::uint64_t n) {
  if (n > (1ULL << 32)) throw DataError("checkpoint-format", "implausible field length");
  std::string s(static_cast<std::size_t>(n), '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw DataError("checkpoint-format", "truncated checkpoint");
  return s;
}

}  // namespace

const Matrix& Checkpoint::tensor(const std::string& name) const {
  for (const auto& [n, m] : tensors)
    if (n == name) return m;
  throw DataError("checkpoint-missing", "checkpoint has no tensor '" + name + "'");
}

void write_checkpoint(std::ostream& out, const std::string& metadata, const ParameterRefs& params) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, metadata.size());
  out.write(metadata.data(), static_cast<std::streamsize>(metadata.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.rows()));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.cols()));
    for (Eigen::Index i = 0; i < p->value.size(); ++i) put<double>(out, p->value.data()[i]);
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  char magic[8];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw DataError("checkpoint-format", "not a LAMI checkpoint");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw DataError("checkpoint-format", "unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.metadata = get_bytes(in, get<std::uint64_t>(in));
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = get_bytes(in, get<std::uint32_t>(in));
    const auto rows = get<std::uint64_t>(in);
    const auto cols = get<std::uint64_t>(in);
    if (rows * cols > (1ULL << 31)) throw DataError("checkpoint-format", "implausible tensor shape for " + name);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = get<double>(in);
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  return c;
}

void save_checkpoint(const std::string& path, const std::string& metadata, const ParameterRefs& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("io", "cannot write " + path);
  write_checkpoint(out, metadata, params);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("io", "cannot read " + path);
  return read_checkpoint(in);
}

void restore_parameters(const Checkpoint& ckpt, const ParameterRefs& params) {
  for (Parameter* p : params) {
    const Matrix& m = ckpt.tensor(p->name);
    if (m.rows() != p->value.rows() || m.cols() != p->value.cols())
      throw DataError("checkpoint-shape", "tensor '" + p->name + "' has shape " + std::to_string(m.rows()) + "x" +
                                              std::to_string(m.cols()));
    p->value = m;
  }
}

}  // namespace lami
