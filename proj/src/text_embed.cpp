#include "lami/text_embed.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "lami/errors.hpp"

namespace lami {

namespace {
constexpr std::uint64_t kBucketSeed = 0x84222325cbf29ce4ULL;
constexpr std::uint64_t kSignSeed = 0x1b3cbf29ce484222ULL;
}  // namespace

TextEmbedder TextEmbedder::hashing(std::size_t dim) {
  if (dim == 0) throw UsageError("embedding dimension must be positive");
  return TextEmbedder(Mode::Hashing, dim);
}

TextEmbedder TextEmbedder::precomputed(std::unordered_map<std::string, Vector> table, std::size_t dim) {
  for (const auto& [key, v] : table) {
    if (static_cast<std::size_t>(v.size()) != dim)
      throw DataError("embedding-dim", "precomputed vector for " + key + " has dimension " + std::to_string(v.size()));
  }
  TextEmbedder e(Mode::Precomputed, dim);
  e.table_ = std::move(table);
  return e;
}

TextEmbedder TextEmbedder::precomputed(const std::string& path, std::size_t dim) {
  std::ifstream in(path);
  if (!in) throw DataError("io", "cannot read " + path);
  std::unordered_map<std::string, Vector> table;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw DataError("embedding-format", path + ":" + std::to_string(lineno) + ": missing tab");
    std::string values = line.substr(tab + 1);
    for (char& c : values)
      if (c == ',') c = ' ';
    std::istringstream ss(values);
    std::vector<double> xs;
    double x = 0.0;
    while (ss >> x) xs.push_back(x);
    table[line.substr(0, tab)] = Eigen::Map<Vector>(xs.data(), static_cast<Eigen::Index>(xs.size()));
  }
  return precomputed(std::move(table), dim);
}

std::string TextEmbedder::text_key(std::string_view text) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

std::vector<std::string> TextEmbedder::words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    const auto uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vector TextEmbedder::embed(std::string_view text) const {
  if (text.empty()) throw DataError("empty-text", "cannot embed empty text");
  if (mode_ == Mode::Precomputed) {
    auto it = table_.find(text_key(text));
    if (it == table_.end()) throw DataError("embedding-lookup", "no precomputed vector for '" + std::string(text) + "'");
    return it->second;
  }

  std::vector<std::string> features = words(text);
  const std::size_t n_words = features.size();
  for (std::size_t i = 0; i + 1 < n_words; ++i) features.push_back(features[i] + " " + features[i + 1]);
  if (features.empty()) features.emplace_back(text);

  Vector v = Vector::Zero(static_cast<Eigen::Index>(dim_));
  auto add = [&](const std::string& f) {
    const std::size_t bucket = fnv1a64(f, kBucketSeed) % dim_;
    const double sign = (fnv1a64(f, kSignSeed) & 1ULL) ? 1.0 : -1.0;
    v(static_cast<Eigen::Index>(bucket)) += sign;
  };
  for (const std::string& f : features) add(f);
  if (v.squaredNorm() == 0.0) add(std::string(text));  // every feature cancelled
  return v / v.norm();
}

}  // namespace lami
