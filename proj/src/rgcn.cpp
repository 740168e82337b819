#include "lami/rgcn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace lami {

RgcnLayer::RgcnLayer(const std::string& name, int n_relations, Eigen::Index d_in, Eigen::Index d_out, int n_bases,
                     Activation act, Rng& rng)
    : n_relations_(n_relations), n_bases_(n_bases), d_in_(d_in), d_out_(d_out), act_(act) {
  if (n_relations <= 0 || d_in <= 0 || d_out <= 0 || n_bases < 0)
    throw std::invalid_argument("rgcn: invalid layer shape");
  self = Parameter{name + ".self", glorot(d_out, d_in, rng), true};
  if (n_bases == 0) {
    relation.reserve(static_cast<std::size_t>(n_relations));
    for (int r = 0; r < n_relations; ++r)
      relation.push_back(Parameter{name + ".rel" + std::to_string(r), glorot(d_out, d_in, rng), true});
  } else {
    Matrix b(n_bases, d_out * d_in);
    for (int k = 0; k < n_bases; ++k) {
      Matrix w = glorot(d_out, d_in, rng);
      b.row(k) = Eigen::Map<const RowVector>(w.data(), w.size());
    }
    bases = Parameter{name + ".bases", std::move(b), true};
    coeffs = Parameter{name + ".coeffs", random_normal(n_relations, n_bases, rng, 1.0 / std::sqrt(double(n_bases))), true};
  }
}

Var RgcnLayer::relation_weight(Tape& tape, int r) {
  if (r < 0 || r >= n_relations_) throw std::out_of_range("rgcn: no weight for relation " + std::to_string(r));
  if (n_bases_ == 0) return tape.param(relation[static_cast<std::size_t>(r)]);
  Var c = ad::gather_rows(tape.param(coeffs), {r});
  return ad::reshape(ad::matmul(c, tape.param(bases)), d_out_, d_in_);
}

Matrix RgcnLayer::relation_weight(int r) const {
  if (r < 0 || r >= n_relations_) throw std::out_of_range("rgcn: no weight for relation " + std::to_string(r));
  if (n_bases_ == 0) return relation[static_cast<std::size_t>(r)].value;
  const Matrix flat = coeffs.value.row(r) * bases.value;
  return Eigen::Map<const Matrix>(flat.data(), d_out_, d_in_);
}

ParameterRefs RgcnLayer::parameters() {
  ParameterRefs out{&self};
  if (n_bases_ == 0) {
    for (auto& p : relation) out.push_back(&p);
  } else {
    out.push_back(&bases);
    out.push_back(&coeffs);
  }
  return out;
}

SparseMatrix relation_mean_operator(const RelationalGraph& g, int relation, std::span<const int> inflow_masked) {
  const auto n = static_cast<Eigen::Index>(g.nodes.size());
  std::vector<bool> masked(g.nodes.size(), false);
  for (int v : inflow_masked) masked.at(static_cast<std::size_t>(v)) = true;
  std::vector<int> count(g.nodes.size(), 0);
  for (const Edge& e : g.edges)
    if (e.type == relation && !masked[static_cast<std::size_t>(e.dst)]) ++count[static_cast<std::size_t>(e.dst)];
  std::vector<Eigen::Triplet<double>> trips;
  for (const Edge& e : g.edges) {
    if (e.type != relation || masked[static_cast<std::size_t>(e.dst)]) continue;
    trips.emplace_back(e.dst, e.src, 1.0 / count[static_cast<std::size_t>(e.dst)]);
  }
  SparseMatrix s(n, n);
  s.setFromTriplets(trips.begin(), trips.end());
  return s;
}

Var RgcnLayer::forward(Tape& tape, const RelationalGraph& g, const Var& H, std::span<const int> inflow_masked) {
  if (H.rows() != static_cast<Eigen::Index>(g.nodes.size()) || H.cols() != d_in_)
    throw std::invalid_argument("rgcn: H is " + std::to_string(H.rows()) + "x" + std::to_string(H.cols()) +
                                ", expected " + std::to_string(g.nodes.size()) + "x" + std::to_string(d_in_));
  std::vector<int> types;
  for (const Edge& e : g.edges) types.push_back(e.type);
  std::sort(types.begin(), types.end());
  types.erase(std::unique(types.begin(), types.end()), types.end());

  Var out = ad::matmul_nt(H, tape.param(self));
  for (int r : types) {
    if (r < 0 || r >= n_relations_) throw std::out_of_range("rgcn: no weight for relation " + std::to_string(r));
    SparseMatrix mean = relation_mean_operator(g, r, inflow_masked);
    if (mean.nonZeros() == 0) continue;
    out = ad::add(out, ad::matmul_nt(ad::spmm(mean, H), relation_weight(tape, r)));
  }
  return ad::activate(out, act_);
}

int resolve_bases(const RgcnEncoderConfig& cfg) {
  if (cfg.n_bases >= 0) return cfg.n_bases;
  return cfg.n_relations > 64 ? 16 : 0;
}

RgcnEncoder::RgcnEncoder(const std::string& prefix, const RgcnEncoderConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.n_layers < 1) throw std::invalid_argument("rgcn: encoder needs at least one layer");
  if (cfg.d_in != cfg.d) input_projection.push_back(Parameter{prefix + ".input", glorot(cfg.d, cfg.d_in, rng), true});
  const int bases = resolve_bases(cfg);
  layers.reserve(static_cast<std::size_t>(cfg.n_layers));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const Activation act = l + 1 == cfg.n_layers ? Activation::Identity : Activation::Relu;
    layers.emplace_back(prefix + ".layer" + std::to_string(l), cfg.n_relations, cfg.d, cfg.d, bases, act, rng);
  }
}

Matrix node_features(const RelationalGraph& g) {
  const std::size_t d = g.feature_dim();
  Matrix X(static_cast<Eigen::Index>(g.nodes.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    if (g.nodes[i].id != static_cast<int>(i)) throw std::invalid_argument("rgcn: node ids must equal positions");
    X.row(static_cast<Eigen::Index>(i)) = g.nodes[i].features.transpose();
  }
  return X;
}

Var RgcnEncoder::input(Tape& tape, const RelationalGraph& g) {
  Var x = tape.constant(node_features(g));
  if (x.cols() != cfg_.d_in) throw std::invalid_argument("rgcn: feature dimension differs from encoder d_in");
  if (!input_projection.empty()) x = ad::matmul_nt(x, tape.param(input_projection.front()));
  return x;
}

Var RgcnEncoder::forward(Tape& tape, const RelationalGraph& g, std::span<const int> inflow_masked) {
  Var h = input(tape, g);
  for (auto& layer : layers) h = layer.forward(tape, g, h, inflow_masked);
  return h;
}

ParameterRefs RgcnEncoder::parameters() {
  ParameterRefs out;
  for (auto& p : input_projection) out.push_back(&p);
  for (auto& l : layers)
    for (Parameter* p : l.parameters()) out.push_back(p);
  return out;
}

}  // namespace lami
