#include "flsim/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "flsim/rng.hpp"

namespace flsim {

void Dataset::validate() const {
  require(static_cast<std::size_t>(features.rows()) == labels.size(),
          "dataset feature rows != label count");
  require(num_classes >= 2, "dataset needs at least 2 classes");
  for (int y : labels) require(y >= 0 && y < num_classes, "dataset label out of range");
  require(client_ids.empty() || client_ids.size() == labels.size(),
          "client id column length mismatch");
}

Dataset synth_dataset(int num_classes, int per_class, int input_dim, double sep,
                      std::uint64_t seed) {
  require(num_classes >= 2, "synthetic dataset needs C >= 2");
  require(per_class >= 1, "per_class must be >= 1");
  require(input_dim >= 1, "input_dim must be >= 1");
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::MatrixXd means(num_classes, input_dim);
  for (int c = 0; c < num_classes; ++c) {
    Eigen::VectorXd dir(input_dim);
    do {
      for (int j = 0; j < input_dim; ++j) dir[j] = normal(rng);
    } while (dir.norm() == 0.0);
    means.row(c) = (sep / dir.norm()) * dir.transpose();
  }

  Dataset ds;
  ds.num_classes = num_classes;
  const int n = num_classes * per_class;
  ds.features.resize(n, input_dim);
  ds.labels.resize(static_cast<std::size_t>(n));
  int row = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < per_class; ++i, ++row) {
      for (int j = 0; j < input_dim; ++j) ds.features(row, j) = means(c, j) + normal(rng);
      ds.labels[static_cast<std::size_t>(row)] = c;
    }
  }
  return ds;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? line.npos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

bool parse_double(std::string_view s, double& v) {
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  return ec == std::errc() && ptr == s.data() + s.size() && std::isfinite(v);
}

bool parse_int(std::string_view s, long long& v) {
  double d = 0.0;
  if (!parse_double(s, d)) return false;
  if (d != std::floor(d)) return false;
  v = static_cast<long long>(d);
  return true;
}

}  // namespace

Dataset parse_csv(std::istream& in, const CsvOptions& opts, const std::string& origin) {
  std::vector<std::vector<double>> rows;
  std::vector<int> labels, ids;
  std::size_t width = 0;
  std::string line;
  int line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto fields = split_fields(line);
    std::vector<double> values(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size(); ++i) numeric = numeric && parse_double(fields[i], values[i]);
    if (first) {
      first = false;
      if (!numeric) continue;  // header
    }
    auto fail = [&](const std::string& why) {
      throw Error(origin + ":" + std::to_string(line_no) + ": " + why);
    };
    if (!numeric) fail("non-numeric field");
    const std::size_t needed = opts.client_id_column >= 0 ? 3 : 2;
    if (fields.size() < needed) fail("too few columns");
    if (width == 0) width = fields.size();
    if (fields.size() != width)
      fail("expected " + std::to_string(width) + " columns, got " + std::to_string(fields.size()));
    if (opts.client_id_column >= static_cast<int>(width) - 1)
      fail("client id column out of range");

    long long label = 0;
    if (!parse_int(fields.back(), label) || label < 0) fail("label must be a non-negative integer");
    std::vector<double> feat;
    feat.reserve(width);
    for (std::size_t i = 0; i + 1 < width; ++i) {
      if (static_cast<int>(i) == opts.client_id_column) {
        long long id = 0;
        if (!parse_int(fields[i], id) || id < 0) fail("client id must be a non-negative integer");
        ids.push_back(static_cast<int>(id));
      } else {
        feat.push_back(values[i]);
      }
    }
    rows.push_back(std::move(feat));
    labels.push_back(static_cast<int>(label));
  }
  require(!rows.empty(), origin + ": no data rows");

  Dataset ds;
  ds.features.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < rows[r].size(); ++c)
      ds.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  ds.labels = std::move(labels);
  ds.client_ids = std::move(ids);
  ds.num_classes = std::max(2, *std::max_element(ds.labels.begin(), ds.labels.end()) + 1);
  return ds;
}

Dataset load_csv(const std::string& path, const CsvOptions& opts) {
  std::ifstream in(path);
  require(static_cast<bool>(in), "cannot open dataset file '" + path + "'");
  return parse_csv(in, opts, path);
}

PartitionKind parse_partition_kind(const std::string& name) {
  if (name == "iid") return PartitionKind::kIid;
  if (name == "dirichlet") return PartitionKind::kDirichlet;
  if (name == "fcj") return PartitionKind::kFcj;
  if (name == "natural") return PartitionKind::kNatural;
  throw Error("unknown partition kind '" + name + "'");
}

std::string to_string(PartitionKind kind) {
  switch (kind) {
    case PartitionKind::kIid: return "iid";
    case PartitionKind::kDirichlet: return "dirichlet";
    case PartitionKind::kFcj: return "fcj";
    case PartitionKind::kNatural: return "natural";
  }
  return "?";
}

void PartitionSpec::validate() const {
  require(num_clients >= 2, "num_clients must be >= 2");
  if (kind == PartitionKind::kDirichlet) require(alpha > 0.0, "Dirichlet alpha must be > 0");
  if (kind == PartitionKind::kFcj) require(bias > 0.0 && bias <= 1.0, "FCJ bias must be in (0, 1]");
  require(split[0] >= 1 && split[1] >= 0 && split[2] >= 0, "invalid split ratio");
}

std::vector<int> ClientShard::all() const {
  std::vector<int> out;
  out.reserve(size());
  out.insert(out.end(), train.begin(), train.end());
  out.insert(out.end(), val.begin(), val.end());
  out.insert(out.end(), test.begin(), test.end());
  return out;
}

ClientShard split_shard(ClientId id, std::vector<int> pool, const std::array<int, 3>& ratio,
                        std::uint64_t seed) {
  Rng rng(seed);
  shuffle(pool, rng);
  const long long n = static_cast<long long>(pool.size());
  const long long total = ratio[0] + ratio[1] + ratio[2];
  const std::size_t n_val = static_cast<std::size_t>(n * ratio[1] / total);
  const std::size_t n_test = static_cast<std::size_t>(n * ratio[2] / total);
  ClientShard s;
  s.client_id = id;
  s.val.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
  s.test.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val),
                pool.begin() + static_cast<std::ptrdiff_t>(n_val + n_test));
  s.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val + n_test), pool.end());
  return s;
}

namespace {

Shards finish(std::vector<std::vector<int>> pools, const PartitionSpec& spec) {
  Shards out;
  out.reserve(pools.size());
  for (std::size_t k = 0; k < pools.size(); ++k) {
    const auto seed = derive_seed(spec.seed, Stream::kPartition, 1000 + k);
    out.push_back(split_shard(static_cast<ClientId>(k), std::move(pools[k]), spec.split, seed));
  }
  return out;
}

std::vector<std::vector<int>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<int>> by(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i)
    by[static_cast<std::size_t>(ds.labels[i])].push_back(static_cast<int>(i));
  return by;
}

}  // namespace

std::vector<int> largest_remainder(const std::vector<double>& weights, int total) {
  std::vector<int> counts(weights.size(), 0);
  std::vector<std::pair<double, std::size_t>> rem;
  rem.reserve(weights.size());
  int assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = weights[k] * total;
    counts[k] = static_cast<int>(std::floor(exact));
    assigned += counts[k];
    rem.emplace_back(exact - counts[k], k);
  }
  std::stable_sort(rem.begin(), rem.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % rem.size(), ++assigned)
    ++counts[rem[i].second];
  return counts;
}

Shards partition_iid(const Dataset& ds, const PartitionSpec& spec) {
  spec.validate();
  std::vector<int> idx(ds.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(spec.seed, Stream::kPartition, 1));
  shuffle(idx, rng);
  const std::size_t n = static_cast<std::size_t>(spec.num_clients);
  std::vector<std::vector<int>> pools(n);
  const std::size_t base = idx.size() / n, extra = idx.size() % n;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    pools[k].assign(idx.begin() + static_cast<std::ptrdiff_t>(pos),
                    idx.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return finish(std::move(pools), spec);
}

Shards partition_dirichlet(const Dataset& ds, const PartitionSpec& spec) {
  spec.validate();
  require(spec.kind == PartitionKind::kDirichlet, "partition_dirichlet needs a Dirichlet spec");
  Rng rng(derive_seed(spec.seed, Stream::kPartition, 2));
  std::gamma_distribution<double> gamma(spec.alpha, 1.0);
  const std::size_t n = static_cast<std::size_t>(spec.num_clients);
  std::vector<std::vector<int>> pools(n);
  auto by_class = indices_by_class(ds);
  for (auto& members : by_class) {
    std::vector<double> p(n);
    double sum = 0.0;
    for (auto& v : p) sum += (v = gamma(rng));
    if (!(sum > 0.0)) {
      // every draw underflowed: all mass on one uniformly chosen client
      std::fill(p.begin(), p.end(), 0.0);
      p[static_cast<std::size_t>(rng() % n)] = 1.0;
      sum = 1.0;
    }
    for (auto& v : p) v /= sum;
    shuffle(members, rng);
    const auto counts = largest_remainder(p, static_cast<int>(members.size()));
    std::size_t pos = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t len = static_cast<std::size_t>(counts[k]);
      pools[k].insert(pools[k].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                      members.begin() + static_cast<std::ptrdiff_t>(pos + len));
      pos += len;
    }
  }
  return finish(std::move(pools), spec);
}

Shards partition_fcj(const Dataset& ds, const PartitionSpec& spec) {
  spec.validate();
  require(spec.kind == PartitionKind::kFcj, "partition_fcj needs an FCJ spec");
  const int C = ds.num_classes;
  const int N = spec.num_clients;
  require(N >= C, "FCJ needs at least one client per class group (N >= C)");

  // Group g owns clients [first[g], first[g+1]); the first N mod C groups get
  // one extra client.
  std::vector<int> first(static_cast<std::size_t>(C) + 1, 0);
  for (int g = 0; g < C; ++g) first[g + 1] = first[g] + N / C + (g < N % C ? 1 : 0);

  Rng rng(derive_seed(spec.seed, Stream::kPartition, 3));
  std::vector<std::vector<int>> group_pool(static_cast<std::size_t>(C));
  auto by_class = indices_by_class(ds);
  const double other = C > 1 ? (1.0 - spec.bias) / (C - 1) : 0.0;
  for (int c = 0; c < C; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    const int count = static_cast<int>(members.size());
    std::vector<int> quota(static_cast<std::size_t>(C));
    int sum = 0;
    for (int g = 0; g < C; ++g) {
      quota[g] = static_cast<int>(std::lround((g == c ? spec.bias : other) * count));
      sum += quota[g];
    }
    // rounding residue goes to the lowest-index group(s)
    int residue = count - sum;
    for (int g = 0; residue != 0 && g < C; ++g) {
      if (residue > 0) {
        quota[g] += residue;
        residue = 0;
      } else {
        const int take = std::min(quota[g], -residue);
        quota[g] -= take;
        residue += take;
      }
    }
    shuffle(members, rng);
    std::size_t pos = 0;
    for (int g = 0; g < C; ++g) {
      const auto len = static_cast<std::size_t>(quota[g]);
      auto& gp = group_pool[static_cast<std::size_t>(g)];
      gp.insert(gp.end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                members.begin() + static_cast<std::ptrdiff_t>(pos + len));
      pos += len;
    }
  }

  std::vector<std::vector<int>> pools(static_cast<std::size_t>(N));
  for (int g = 0; g < C; ++g) {
    auto& gp = group_pool[static_cast<std::size_t>(g)];
    shuffle(gp, rng);
    const int clients = first[g + 1] - first[g];
    for (std::size_t i = 0; i < gp.size(); ++i)
      pools[static_cast<std::size_t>(first[g] + static_cast<int>(i % clients))].push_back(gp[i]);
  }
  return finish(std::move(pools), spec);
}

Shards partition_natural(const Dataset& ds, const PartitionSpec& spec) {
  spec.validate();
  require(!ds.client_ids.empty(), "natural partition needs a client id column");
  std::vector<int> distinct = ds.client_ids;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  require(static_cast<int>(distinct.size()) <= spec.num_clients,
          "natural partition found " + std::to_string(distinct.size()) +
              " distinct client ids but num_clients = " + std::to_string(spec.num_clients));
  std::vector<std::vector<int>> pools(static_cast<std::size_t>(spec.num_clients));
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto k = std::lower_bound(distinct.begin(), distinct.end(), ds.client_ids[i]) - distinct.begin();
    pools[static_cast<std::size_t>(k)].push_back(static_cast<int>(i));
  }
  return finish(std::move(pools), spec);
}

Shards partition(const Dataset& ds, const PartitionSpec& spec) {
  switch (spec.kind) {
    case PartitionKind::kIid: return partition_iid(ds, spec);
    case PartitionKind::kDirichlet: return partition_dirichlet(ds, spec);
    case PartitionKind::kFcj: return partition_fcj(ds, spec);
    case PartitionKind::kNatural: return partition_natural(ds, spec);
  }
  throw Error("unknown partition kind");
}

Dataset imbalance_transform(const Dataset& ds, const std::vector<double>& keep,
                            std::uint64_t seed) {
  require(keep.size() == static_cast<std::size_t>(ds.num_classes),
          "keep vector needs one fraction per class");
  for (double k : keep) require(k > 0.0 && k <= 1.0, "keep fractions must be in (0, 1]");
  Rng rng(derive_seed(seed, Stream::kData, 7));
  auto by_class = indices_by_class(ds);
  std::vector<int> rows;
  for (int c = 0; c < ds.num_classes; ++c) {
    auto& members = by_class[static_cast<std::size_t>(c)];
    const auto target = static_cast<std::size_t>(std::lround(keep[c] * static_cast<double>(members.size())));
    require(members.empty() || target > 0, "imbalance transform would empty class " + std::to_string(c));
    shuffle(members, rng);
    rows.insert(rows.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(target));
  }
  std::sort(rows.begin(), rows.end());
  Dataset out;
  out.num_classes = ds.num_classes;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
  out.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(rows[i]);
    out.labels[i] = ds.labels[static_cast<std::size_t>(rows[i])];
    if (!ds.client_ids.empty()) out.client_ids.push_back(ds.client_ids[static_cast<std::size_t>(rows[i])]);
  }
  return out;
}

HeterogeneityStats heterogeneity_stats(const Shards& shards, const Dataset& ds) {
  HeterogeneityStats st;
  for (const auto& s : shards) {
    std::vector<int> freq(static_cast<std::size_t>(ds.num_classes), 0);
    for (int i : s.all()) ++freq[static_cast<std::size_t>(ds.labels[static_cast<std::size_t>(i)])];
    st.samples_per_client.push_back(static_cast<int>(s.size()));
    st.classes_per_client.push_back(
        static_cast<int>(std::count_if(freq.begin(), freq.end(), [](int v) { return v > 0; })));
    st.class_freq.push_back(std::move(freq));
  }
  return st;
}

void write_stats_csv(std::ostream& out, const HeterogeneityStats& stats) {
  const std::size_t C = stats.class_freq.empty() ? 0 : stats.class_freq.front().size();
  out << "client_id,n_samples,n_classes";
  for (std::size_t c = 0; c < C; ++c) out << ",class_" << c;
  out << '\n';
  for (std::size_t k = 0; k < stats.samples_per_client.size(); ++k) {
    out << k << ',' << stats.samples_per_client[k] << ',' << stats.classes_per_client[k];
    for (int v : stats.class_freq[k]) out << ',' << v;
    out << '\n';
  }
}

Batch to_batch(const Dataset& ds, const std::vector<int>& rows) {
  Batch b;
  b.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
  b.labels.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    b.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(rows[i]);
    b.labels[i] = ds.labels[static_cast<std::size_t>(rows[i])];
  }
  return b;
}

}  // namespace flsim
