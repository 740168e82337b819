#pragma once

// Binary tensor archive, little-endian:
//   "LAMICKPT" | u32 version (1) | u64 n | n bytes of JSON metadata |
//   u32 count | count x { u32 name_len | name | u64 rows | u64 cols | rows*cols f64, row-major }

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "lami/tensor.hpp"

namespace lami {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string metadata;  // JSON text
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const;
};

void write_checkpoint(std::ostream& out, const std::string& metadata, const ParameterRefs& params);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const std::string& metadata, const ParameterRefs& params);
Checkpoint load_checkpoint(const std::string& path);

/// Copies tensors into parameters by name; shapes must match.
void restore_parameters(const Checkpoint& ckpt, const ParameterRefs& params);

}  // namespace lami
