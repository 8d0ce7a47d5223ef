#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tndvga/sparse.hpp"
#include "tndvga/tensor.hpp"

namespace tndvga {

/// Noiseless potential-outcome means; tau_i = mu1_i - mu0_i.
struct GroundTruth {
  std::vector<double> mu0;
  std::vector<double> mu1;
  bool operator==(const GroundTruth&) const = default;
};

/// Disjoint train/val/test node indices covering 0..n-1, each sorted ascending.
struct SplitIndex {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;

  const std::vector<std::size_t>& by_name(std::string_view name) const;
  bool operator==(const SplitIndex&) const = default;
};

struct SplitFractions {
  double train = 0.6;
  double val = 0.2;
  double test = 0.2;
};

/// Networked observational data: features x (n x k), undirected adjacency A,
/// binary treatment t and factual outcome y.
struct Dataset {
  Tensor features;
  SparseMatrix adjacency;
  std::vector<int> treatment;
  std::vector<double> outcome;
  std::optional<GroundTruth> truth;
  std::optional<SplitIndex> splits;
  nlohmann::json meta = nlohmann::json::object();

  std::size_t num_nodes() const { return features.rows(); }
  std::size_t num_features() const { return features.cols(); }
  /// mu1 - mu0. Throws InputError when truth is absent.
  std::vector<double> true_effects() const;

  bool operator==(const Dataset&) const = default;
};

/// Checks every Dataset invariant; throws InputError naming the first violation.
void validate(const Dataset& d);
void validate(const SplitIndex& s, std::size_t n);

/// Symmetric 0/1 adjacency from canonical (src < dst) undirected edges.
/// Rejects src >= dst, out-of-range endpoints and duplicates.
SparseMatrix adjacency_from_edges(std::size_t n, std::span<const std::pair<std::size_t, std::size_t>> edges);
/// Upper-triangle edge list (src < dst), sorted.
std::vector<std::pair<std::size_t, std::size_t>> edge_list(const SparseMatrix& adjacency);

/// D^-1/2 (A + I) D^-1/2 with D the degree matrix of A + I.
SparseMatrix normalize_adjacency(const SparseMatrix& adjacency);

/// Seeded random split. Sizes: round(train*n), round(val*n), remainder.
/// Reshuffles (up to 100 attempts) until every part contains both treatment
/// arms; throws NumericalError if that never happens. Requires n >= 10.
SplitIndex split(std::span<const int> treatment, const SplitFractions& fractions, std::uint64_t seed);
/// Split sizes only; exposed for testing the rounding rule.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& fractions);

/// Directory layout: features.csv, edges.csv, nodes.csv, splits.json, meta.json.
void save(const Dataset& d, const std::filesystem::path& dir);
/// splits.json and the truth columns are optional.
Dataset load(const std::filesystem::path& dir);

}  // namespace tndvga
