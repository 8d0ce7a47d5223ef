#include "tndvga/graphdata.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include "tndvga/errors.hpp"

namespace tndvga {
namespace fs = std::filesystem;

namespace {

void append_double(std::string& out, double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, ptr);
}

double parse_double(std::string_view field, const fs::path& file, std::size_t line) {
  double v = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw InputError(file.string() + ":" + std::to_string(line) + ": cannot parse number '" + std::string(field) + "'");
  }
  return v;
}

std::size_t parse_index(std::string_view field, const fs::path& file, std::size_t line) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw InputError(file.string() + ":" + std::to_string(line) + ": cannot parse index '" + std::string(field) + "'");
  }
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> read_lines(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot open " + file.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_file(const fs::path& file, const std::string& content) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + file.string());
  out << content;
}

nlohmann::json read_json(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw InputError("cannot open " + file.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("malformed JSON in " + file.string() + ": " + e.what());
  }
}

}  // namespace

const std::vector<std::size_t>& SplitIndex::by_name(std::string_view name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw InputError("unknown split '" + std::string(name) + "' (expected train, val or test)");
}

std::vector<double> Dataset::true_effects() const {
  if (!truth) throw InputError("dataset has no ground-truth potential outcomes");
  std::vector<double> tau(truth->mu0.size());
  for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = truth->mu1[i] - truth->mu0[i];
  return tau;
}

void validate(const SplitIndex& s, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (std::size_t i : *part) {
      if (i >= n) throw InputError("split index " + std::to_string(i) + " out of range");
      if (seen[i]++) throw InputError("split index " + std::to_string(i) + " appears more than once");
    }
  }
  if (std::find(seen.begin(), seen.end(), 0) != seen.end()) throw InputError("splits do not cover every node");
}

void validate(const Dataset& d) {
  const std::size_t n = d.num_nodes();
  if (d.features.rank() != 2) throw InputError("features must be an n x k matrix");
  if (!d.features.all_finite()) throw InputError("features contain non-finite values");
  if (d.adjacency.rows() != n || d.adjacency.cols() != n) throw InputError("adjacency size does not match node count");
  if (d.treatment.size() != n || d.outcome.size() != n) throw InputError("treatment/outcome length does not match node count");
  for (int t : d.treatment) {
    if (t != 0 && t != 1) throw InputError("treatment must be 0 or 1");
  }
  for (double y : d.outcome) {
    if (!std::isfinite(y)) throw InputError("outcome contains non-finite values");
  }
  for (const auto& e : d.adjacency.triplets()) {
    if (e.row == e.col) throw InputError("adjacency has a self loop at node " + std::to_string(e.row));
    if (e.value != 1.0) throw InputError("adjacency entries must be 1");
    if (d.adjacency.at(e.col, e.row) != 1.0) throw InputError("adjacency is not symmetric");
  }
  if (d.truth) {
    if (d.truth->mu0.size() != n || d.truth->mu1.size() != n) throw InputError("truth length does not match node count");
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::isfinite(d.truth->mu1[i] - d.truth->mu0[i])) throw InputError("non-finite true effect");
    }
  }
  if (d.splits) validate(*d.splits, n);
}

SparseMatrix adjacency_from_edges(std::size_t n, std::span<const std::pair<std::size_t, std::size_t>> edges) {
  std::vector<Triplet> t;
  t.reserve(edges.size() * 2);
  for (const auto& [src, dst] : edges) {
    if (src >= dst) {
      throw InputError("edge (" + std::to_string(src) + "," + std::to_string(dst) + ") violates src < dst");
    }
    if (dst >= n) throw InputError("edge endpoint " + std::to_string(dst) + " out of range");
    t.push_back({src, dst, 1.0});
    t.push_back({dst, src, 1.0});
  }
  return SparseMatrix(n, n, std::move(t));
}

std::vector<std::pair<std::size_t, std::size_t>> edge_list(const SparseMatrix& adjacency) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (const auto& e : adjacency.triplets()) {
    if (e.row < e.col) out.emplace_back(e.row, e.col);
  }
  return out;
}

SparseMatrix normalize_adjacency(const SparseMatrix& adjacency) {
  const std::size_t n = adjacency.rows();
  std::vector<double> degree(n, 1.0);
  for (const auto& e : adjacency.triplets()) {
    if (e.row != e.col) degree[e.row] += e.value;
  }
  std::vector<Triplet> t;
  t.reserve(adjacency.nnz() + n);
  for (std::size_t i = 0; i < n; ++i) t.push_back({i, i, 1.0 / degree[i]});
  for (const auto& e : adjacency.triplets()) {
    if (e.row == e.col) continue;
    t.push_back({e.row, e.col, e.value / std::sqrt(degree[e.row] * degree[e.col])});
  }
  return SparseMatrix(n, n, std::move(t));
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitFractions& f) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9) {
    throw InputError("split fractions must be nonnegative and sum to 1");
  }
  const auto dn = static_cast<double>(n);
  const auto train = static_cast<std::size_t>(std::llround(f.train * dn));
  const auto val = std::min(static_cast<std::size_t>(std::llround(f.val * dn)), n - train);
  return {train, val, n - train - val};
}

SplitIndex split(std::span<const int> treatment, const SplitFractions& fractions, std::uint64_t seed) {
  const std::size_t n = treatment.size();
  if (n < 10) throw InputError("split requires at least 10 nodes");
  const auto sizes = split_sizes(n, fractions);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> perm(n);
  auto has_both_arms = [&](const std::vector<std::size_t>& idx) {
    bool t0 = false, t1 = false;
    for (std::size_t i : idx) (treatment[i] ? t1 : t0) = true;
    return t0 && t1;
  };
  for (int attempt = 0; attempt < 100; ++attempt) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    SplitIndex s;
    s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]));
    s.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0]),
                 perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]));
    s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(sizes[0] + sizes[1]), perm.end());
    for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
    if (has_both_arms(s.train) && has_both_arms(s.val) && has_both_arms(s.test)) return s;
  }
  throw NumericalError("could not find a split with both treatment arms in every part after 100 attempts");
}

void save(const Dataset& d, const fs::path& dir) {
  validate(d);
  fs::create_directories(dir);

  std::string buf;
  const std::size_t k = d.num_features();
  for (std::size_t i = 0; i < d.num_nodes(); ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (j) buf.push_back(',');
      append_double(buf, d.features(i, j));
    }
    buf.push_back('\n');
  }
  write_file(dir / "features.csv", buf);

  buf = "src,dst\n";
  for (const auto& [src, dst] : edge_list(d.adjacency)) {
    buf += std::to_string(src);
    buf.push_back(',');
    buf += std::to_string(dst);
    buf.push_back('\n');
  }
  write_file(dir / "edges.csv", buf);

  buf = d.truth ? "t,y,mu0,mu1\n" : "t,y\n";
  for (std::size_t i = 0; i < d.num_nodes(); ++i) {
    buf += std::to_string(d.treatment[i]);
    buf.push_back(',');
    append_double(buf, d.outcome[i]);
    if (d.truth) {
      buf.push_back(',');
      append_double(buf, d.truth->mu0[i]);
      buf.push_back(',');
      append_double(buf, d.truth->mu1[i]);
    }
    buf.push_back('\n');
  }
  write_file(dir / "nodes.csv", buf);

  if (d.splits) {
    const nlohmann::json j = {{"train", d.splits->train}, {"val", d.splits->val}, {"test", d.splits->test}};
    write_file(dir / "splits.json", j.dump() + "\n");
  } else if (fs::exists(dir / "splits.json")) {
    fs::remove(dir / "splits.json");
  }
  write_file(dir / "meta.json", d.meta.dump(2) + "\n");
}

Dataset load(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw InputError("dataset directory not found: " + dir.string());
  Dataset d;

  const auto feature_file = dir / "features.csv";
  const auto rows = read_lines(feature_file);
  std::vector<double> values;
  std::size_t k = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto fields = split_fields(rows[i]);
    if (i == 0) k = fields.size();
    if (fields.size() != k) {
      throw InputError(feature_file.string() + ":" + std::to_string(i + 1) + ": expected " + std::to_string(k) + " columns");
    }
    for (auto f : fields) values.push_back(parse_double(f, feature_file, i + 1));
  }
  const std::size_t n = rows.size();
  d.features = Tensor(Shape{n, k}, std::move(values));

  const auto node_file = dir / "nodes.csv";
  const auto node_lines = read_lines(node_file);
  if (node_lines.empty()) throw InputError(node_file.string() + ": missing header");
  const bool with_truth = node_lines[0] == "t,y,mu0,mu1";
  if (!with_truth && node_lines[0] != "t,y") {
    throw InputError(node_file.string() + ": header must be 't,y' or 't,y,mu0,mu1'");
  }
  if (node_lines.size() - 1 != n) throw InputError(node_file.string() + ": row count does not match features.csv");
  if (with_truth) d.truth = GroundTruth{};
  for (std::size_t i = 1; i < node_lines.size(); ++i) {
    const auto fields = split_fields(node_lines[i]);
    if (fields.size() != (with_truth ? 4u : 2u)) throw InputError(node_file.string() + ":" + std::to_string(i + 1) + ": wrong column count");
    const double t = parse_double(fields[0], node_file, i + 1);
    if (t != 0.0 && t != 1.0) throw InputError(node_file.string() + ":" + std::to_string(i + 1) + ": treatment must be 0 or 1");
    d.treatment.push_back(static_cast<int>(t));
    d.outcome.push_back(parse_double(fields[1], node_file, i + 1));
    if (with_truth) {
      d.truth->mu0.push_back(parse_double(fields[2], node_file, i + 1));
      d.truth->mu1.push_back(parse_double(fields[3], node_file, i + 1));
    }
  }

  const auto edge_file = dir / "edges.csv";
  const auto edge_lines = read_lines(edge_file);
  if (edge_lines.empty() || edge_lines[0] != "src,dst") throw InputError(edge_file.string() + ": header must be 'src,dst'");
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t i = 1; i < edge_lines.size(); ++i) {
    const auto fields = split_fields(edge_lines[i]);
    if (fields.size() != 2) throw InputError(edge_file.string() + ":" + std::to_string(i + 1) + ": expected src,dst");
    edges.emplace_back(parse_index(fields[0], edge_file, i + 1), parse_index(fields[1], edge_file, i + 1));
  }
  d.adjacency = adjacency_from_edges(n, edges);

  if (fs::exists(dir / "splits.json")) {
    const auto j = read_json(dir / "splits.json");
    try {
      d.splits = SplitIndex{j.at("train").get<std::vector<std::size_t>>(), j.at("val").get<std::vector<std::size_t>>(),
                            j.at("test").get<std::vector<std::size_t>>()};
    } catch (const nlohmann::json::exception& e) {
      throw InputError("malformed splits.json: " + std::string(e.what()));
    }
  }
  if (fs::exists(dir / "meta.json")) d.meta = read_json(dir / "meta.json");
  validate(d);
  return d;
}

}  // namespace tndvga
