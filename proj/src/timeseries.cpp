#include "decayrnn/timeseries.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "decayrnn/format.hpp"

namespace decayrnn {

std::string to_string(TaskMode mode) {
  switch (mode) {
    case TaskMode::Binary: return "binary";
    case TaskMode::Multiclass: return "multiclass";
    case TaskMode::MultiTask: return "multitask";
  }
  return "binary";
}

TaskMode task_mode_from_string(const std::string& name) {
  if (name == "binary") return TaskMode::Binary;
  if (name == "multiclass") return TaskMode::Multiclass;
  if (name == "multitask") return TaskMode::MultiTask;
  throw ArgumentError("unknown task mode: " + name);
}

int Dataset::outputs() const {
  switch (task_mode) {
    case TaskMode::Binary: return 1;
    case TaskMode::Multiclass: return n_classes;
    case TaskMode::MultiTask: return static_cast<int>(task_names.size());
  }
  return 1;
}

int Dataset::stratum(std::size_t i) const {
  return static_cast<int>(std::lround(samples.at(i).label(0)));
}

Matrix compute_intervals(const Matrix& mask, const Vector& timestamps) {
  const Index steps = mask.rows();
  if (timestamps.size() != steps) {
    throw ArgumentError("compute_intervals: timestamp count does not match mask rows");
  }
  for (Index t = 1; t < steps; ++t) {
    if (!(timestamps(t) > timestamps(t - 1))) {
      throw DataError("timestamps must be strictly increasing (step " + std::to_string(t) + ")");
    }
  }
  Matrix deltas = Matrix::Zero(steps, mask.cols());
  for (Index t = 1; t < steps; ++t) {
    const double gap = timestamps(t) - timestamps(t - 1);
    for (Index d = 0; d < mask.cols(); ++d) {
      deltas(t, d) = mask(t - 1, d) > 0.5 ? gap : gap + deltas(t - 1, d);
    }
  }
  return deltas;
}

Sample make_sample(std::string id, Vector timestamps, Matrix values, Vector label) {
  if (values.rows() == 0) throw DataError("series '" + id + "' has no steps");
  if (timestamps.size() != values.rows()) {
    throw DataError("series '" + id + "': timestamp count does not match value rows");
  }
  Sample s;
  s.id = std::move(id);
  s.mask = values.unaryExpr([](double v) { return is_missing(v) ? 0.0 : 1.0; });
  s.deltas = compute_intervals(s.mask, timestamps);
  s.timestamps = std::move(timestamps);
  s.values = std::move(values);
  s.label = std::move(label);
  return s;
}

namespace {

std::vector<std::size_t> all_indices(const Dataset& data) {
  std::vector<std::size_t> idx(data.samples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

}  // namespace

Vector empirical_means(const Dataset& data, const std::vector<std::size_t>& indices) {
  const Index dims = data.variables();
  Vector sum = Vector::Zero(dims);
  Vector count = Vector::Zero(dims);
  for (std::size_t i : indices) {
    const Sample& s = data.samples.at(i);
    for (Index t = 0; t < s.steps(); ++t) {
      for (Index d = 0; d < dims; ++d) {
        if (s.mask(t, d) > 0.5) {
          sum(d) += s.values(t, d);
          count(d) += 1.0;
        }
      }
    }
  }
  Vector means(dims);
  for (Index d = 0; d < dims; ++d) {
    if (count(d) == 0.0) {
      std::cerr << "warning: variable '" << data.variable_names[d]
                << "' is never observed; using mean 0\n";
      means(d) = 0.0;
    } else {
      means(d) = sum(d) / count(d);
    }
  }
  return means;
}

Vector empirical_means(const Dataset& data) { return empirical_means(data, all_indices(data)); }

NormStats compute_norm_stats(const Dataset& data, const std::vector<std::size_t>& indices) {
  const Index dims = data.variables();
  NormStats stats{empirical_means(data, indices), Vector::Zero(dims)};
  Vector count = Vector::Zero(dims);
  for (std::size_t i : indices) {
    const Sample& s = data.samples.at(i);
    for (Index t = 0; t < s.steps(); ++t) {
      for (Index d = 0; d < dims; ++d) {
        if (s.mask(t, d) > 0.5) {
          const double dev = s.values(t, d) - stats.mean(d);
          stats.std(d) += dev * dev;
          count(d) += 1.0;
        }
      }
    }
  }
  for (Index d = 0; d < dims; ++d) {
    const double var = count(d) > 0.0 ? stats.std(d) / count(d) : 0.0;
    if (!(var > 0.0)) {
      std::cerr << "warning: variable '" << data.variable_names[d]
                << "' has zero variance; std clamped to 1\n";
      stats.std(d) = 1.0;
    } else {
      stats.std(d) = std::sqrt(var);
    }
  }
  return stats;
}

void apply_normalization(Dataset& data, const NormStats& stats) {
  for (Sample& s : data.samples) {
    for (Index t = 0; t < s.steps(); ++t) {
      for (Index d = 0; d < s.variables(); ++d) {
        if (s.mask(t, d) > 0.5) s.values(t, d) = (s.values(t, d) - stats.mean(d)) / stats.std(d);
      }
    }
  }
}

NormStats normalize(Dataset& data, const std::vector<std::size_t>& train_indices) {
  NormStats stats = compute_norm_stats(data, train_indices);
  apply_normalization(data, stats);
  return stats;
}

Sample resample(const RawSeries& raw, double bin_hours, Vector label) {
  if (!(bin_hours > 0.0)) throw ArgumentError("resample: bin_hours must be positive");
  if (raw.timestamps.empty()) throw DataError("series '" + raw.id + "' is empty");
  const std::size_t dims = raw.readings.front().size();
  double last = 0.0;
  for (double ts : raw.timestamps) {
    if (ts < 0.0) throw DataError("series '" + raw.id + "': negative timestamp");
    last = std::max(last, ts);
  }
  const auto bins = static_cast<Index>(std::floor(last / bin_hours)) + 1;
  Matrix sum = Matrix::Zero(bins, static_cast<Index>(dims));
  Matrix count = Matrix::Zero(bins, static_cast<Index>(dims));
  for (std::size_t k = 0; k < raw.timestamps.size(); ++k) {
    const auto bin = static_cast<Index>(std::floor(raw.timestamps[k] / bin_hours));
    for (std::size_t d = 0; d < dims; ++d) {
      const double v = raw.readings[k][d];
      if (!is_missing(v)) {
        sum(bin, static_cast<Index>(d)) += v;
        count(bin, static_cast<Index>(d)) += 1.0;
      }
    }
  }
  Matrix values(bins, static_cast<Index>(dims));
  Vector timestamps(bins);
  for (Index b = 0; b < bins; ++b) {
    timestamps(b) = static_cast<double>(b) * bin_hours;
    for (Index d = 0; d < values.cols(); ++d) {
      values(b, d) = count(b, d) > 0.0 ? sum(b, d) / count(b, d) : missing_value();
    }
  }
  return make_sample(raw.id, std::move(timestamps), std::move(values), std::move(label));
}

Vector missing_rate(const Sample& sample) {
  const double steps = static_cast<double>(sample.steps());
  return (Vector::Ones(sample.variables()).array() -
          sample.mask.colwise().sum().transpose().array() / steps)
      .matrix();
}

double pearson(const Vector& a, const Vector& b, bool* degenerate) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ArgumentError("pearson: need two equal-length vectors with at least 2 entries");
  }
  const Eigen::ArrayXd da = a.array() - a.mean();
  const Eigen::ArrayXd db = b.array() - b.mean();
  const double saa = (da * da).sum();
  const double sbb = (db * db).sum();
  if (degenerate) *degenerate = false;
  if (saa <= 0.0 || sbb <= 0.0) {
    if (degenerate) *degenerate = true;
    return 0.0;
  }
  return (da * db).sum() / std::sqrt(saa * sbb);
}

std::vector<CorrelationEntry> missingness_label_correlation(const Dataset& data) {
  const std::size_t n = data.samples.size();
  if (n < 2) throw ArgumentError("correlation needs at least 2 samples");
  const Index dims = data.variables();
  Matrix rates(static_cast<Index>(n), dims);
  for (std::size_t i = 0; i < n; ++i) rates.row(static_cast<Index>(i)) = missing_rate(data.samples[i]);

  std::vector<std::string> tasks = data.task_names;
  if (tasks.empty()) tasks.push_back("label");
  std::vector<CorrelationEntry> out;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    Vector labels(static_cast<Index>(n));
    for (std::size_t i = 0; i < n; ++i) labels(static_cast<Index>(i)) = data.samples[i].label(static_cast<Index>(k));
    bool label_degenerate = false;
    pearson(labels, labels, &label_degenerate);
    if (label_degenerate) throw ArgumentError("task '" + tasks[k] + "' has zero label variance");
    for (Index d = 0; d < dims; ++d) {
      CorrelationEntry e{data.variable_names[d], tasks[k]};
      e.pearson_r = pearson(rates.col(d), labels, &e.degenerate);
      out.push_back(std::move(e));
    }
  }
  return out;
}

DatasetStats dataset_stats(const Dataset& data) {
  DatasetStats st;
  st.samples = data.samples.size();
  st.variables = data.variables();
  if (data.samples.empty()) return st;
  double steps = 0.0;
  double rate = 0.0;
  for (const Sample& s : data.samples) {
    steps += static_cast<double>(s.steps());
    st.max_steps = std::max(st.max_steps, s.steps());
    rate += missing_rate(s).mean();
  }
  st.mean_steps = steps / static_cast<double>(st.samples);
  st.mean_missing_rate = rate / static_cast<double>(st.samples);
  return st;
}

nlohmann::json to_json(const DatasetStats& stats) {
  return {{"samples", stats.samples},
          {"variables", stats.variables},
          {"mean_steps", stats.mean_steps},
          {"max_steps", stats.max_steps},
          {"mean_missing_rate", stats.mean_missing_rate}};
}

Sample truncate_prefix(const Sample& sample, double cutoff_hours) {
  if (!(cutoff_hours > 0.0)) throw ArgumentError("truncate_prefix: cutoff must be positive");
  Index keep = 0;
  while (keep < sample.steps() && sample.timestamps(keep) <= cutoff_hours) ++keep;
  if (keep == 0) {
    throw ArgumentError("truncate_prefix: no steps at or before " + format_number(cutoff_hours) + "h");
  }
  if (keep == sample.steps()) return sample;
  Sample out;
  out.id = sample.id;
  out.label = sample.label;
  out.timestamps = sample.timestamps.head(keep);
  out.values = sample.values.topRows(keep);
  out.mask = sample.mask.topRows(keep);
  out.deltas = compute_intervals(out.mask, out.timestamps);
  return out;
}

namespace {

std::map<int, std::vector<std::size_t>> group_by_stratum(const Dataset& data,
                                                         const std::vector<std::size_t>& indices) {
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i : indices) groups[data.stratum(i)].push_back(i);
  return groups;
}

}  // namespace

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> stratified_holdout(
    const Dataset& data, std::vector<std::size_t> indices, double fraction, Rng& rng) {
  std::vector<std::size_t> rest;
  std::vector<std::size_t> held;
  for (auto& [stratum, members] : group_by_stratum(data, indices)) {
    shuffle(members, rng);
    const auto n_held = static_cast<std::size_t>(std::lround(fraction * static_cast<double>(members.size())));
    held.insert(held.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_held));
    rest.insert(rest.end(), members.begin() + static_cast<std::ptrdiff_t>(n_held), members.end());
  }
  std::sort(rest.begin(), rest.end());
  std::sort(held.begin(), held.end());
  return {std::move(rest), std::move(held)};
}

std::vector<FoldSplit> kfold_split(const Dataset& data, int k, std::uint64_t seed, bool stratify) {
  if (k < 2) throw ConfigError("kfold_split: k must be at least 2");
  const std::size_t n = data.samples.size();
  if (n < static_cast<std::size_t>(k)) throw ConfigError("kfold_split: fewer samples than folds");
  Rng rng(seed, 0x6b666f6c64ULL);

  std::vector<std::size_t> order;
  if (stratify) {
    for (auto& [stratum, members] : group_by_stratum(data, all_indices(data))) {
      if (members.size() < static_cast<std::size_t>(k)) {
        throw ConfigError("kfold_split: class " + std::to_string(stratum) + " has " +
                          std::to_string(members.size()) + " members, fewer than k=" +
                          std::to_string(k));
      }
      shuffle(members, rng);
      order.insert(order.end(), members.begin(), members.end());
    }
  } else {
    order = all_indices(data);
    shuffle(order, rng);
  }

  std::vector<int> fold_of(n);
  for (std::size_t pos = 0; pos < order.size(); ++pos) fold_of[order[pos]] = static_cast<int>(pos % k);

  std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> train;
    for (std::size_t i = 0; i < n; ++i) {
      (fold_of[i] == f ? folds[f].test : train).push_back(i);
    }
    Rng val_rng = rng.fork(0x76616cULL + static_cast<std::uint64_t>(f));
    if (stratify) {
      std::tie(folds[f].train, folds[f].validation) = stratified_holdout(data, train, 0.2, val_rng);
    } else {
      shuffle(train, val_rng);
      const auto n_val = static_cast<std::size_t>(std::lround(0.2 * static_cast<double>(train.size())));
      folds[f].validation.assign(train.begin(), train.begin() + static_cast<std::ptrdiff_t>(n_val));
      folds[f].train.assign(train.begin() + static_cast<std::ptrdiff_t>(n_val), train.end());
      std::sort(folds[f].validation.begin(), folds[f].validation.end());
      std::sort(folds[f].train.begin(), folds[f].train.end());
    }
  }
  return folds;
}

std::vector<std::size_t> stratified_subsample(const Dataset& data, std::size_t size,
                                              std::uint64_t seed) {
  const std::size_t n = data.samples.size();
  if (size > n) throw ConfigError("subsample size exceeds dataset size");
  if (size == n) return all_indices(data);
  Rng rng(seed, 0x737562ULL);
  auto groups = group_by_stratum(data, all_indices(data));

  // Largest-remainder apportionment keeps every stratum's share within one sample.
  std::vector<std::pair<double, int>> remainders;
  std::map<int, std::size_t> quota;
  std::size_t assigned = 0;
  for (const auto& [stratum, members] : groups) {
    const double exact = static_cast<double>(size) * static_cast<double>(members.size()) / static_cast<double>(n);
    quota[stratum] = static_cast<std::size_t>(std::floor(exact));
    assigned += quota[stratum];
    remainders.emplace_back(exact - std::floor(exact), stratum);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < size; ++i, ++assigned) ++quota[remainders[i].second];

  std::vector<std::size_t> out;
  for (auto& [stratum, members] : groups) {
    shuffle(members, rng);
    out.insert(out.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(quota[stratum]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& indices) {
  Dataset out;
  out.variable_names = data.variable_names;
  out.task_mode = data.task_mode;
  out.n_classes = data.n_classes;
  out.task_names = data.task_names;
  out.metadata = data.metadata;
  out.samples.reserve(indices.size());
  for (std::size_t i : indices) out.samples.push_back(data.samples.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) {
    if (!cell.empty() && cell.back() == '\r') cell.pop_back();
    cells.push_back(cell);
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

bool parse_cell(const std::string& cell, double* out) {
  std::string trimmed = cell;
  trimmed.erase(0, trimmed.find_first_not_of(" \t"));
  trimmed.erase(trimmed.find_last_not_of(" \t") + 1);
  if (trimmed.empty() || trimmed == "NA" || trimmed == "nan" || trimmed == "NaN") return false;
  const char* begin = trimmed.data();
  const char* end = begin + trimmed.size();
  auto [ptr, ec] = std::from_chars(begin, end, *out);
  if (ec != std::errc() || ptr != end) throw DataError("cannot parse number '" + cell + "'");
  return true;
}

/// Reads non-comment lines; the first is the header.
std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    rows.push_back(split_csv_line(line));
  }
  if (rows.empty()) throw DataError(path.string() + " has no header");
  return rows;
}

struct LabelTable {
  std::vector<std::string> tasks;
  std::unordered_map<std::string, Vector> labels;
};

LabelTable read_labels(const std::filesystem::path& path) {
  auto rows = read_csv_rows(path);
  LabelTable table;
  if (rows[0].size() < 2 || rows[0][0] != "series_id") {
    throw DataError(path.string() + ": header must be series_id,<task1>,...");
  }
  table.tasks.assign(rows[0].begin() + 1, rows[0].end());
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() != rows[0].size()) throw DataError(path.string() + ": ragged row " + std::to_string(r));
    Vector label(static_cast<Index>(table.tasks.size()));
    for (std::size_t k = 0; k < table.tasks.size(); ++k) {
      double v = 0.0;
      if (!parse_cell(rows[r][k + 1], &v)) throw DataError("missing label for " + rows[r][0]);
      label(static_cast<Index>(k)) = v;
    }
    table.labels[rows[r][0]] = label;
  }
  return table;
}

Dataset assemble(std::vector<Sample> samples, std::vector<std::string> names, const LabelTable& table) {
  Dataset data;
  data.variable_names = std::move(names);
  for (Sample& s : samples) {
    auto it = table.labels.find(s.id);
    if (it == table.labels.end()) throw DataError("no label for series '" + s.id + "'");
    s.label = it->second;
  }
  data.samples = std::move(samples);
  if (table.tasks.size() > 1) {
    data.task_mode = TaskMode::MultiTask;
    data.task_names = table.tasks;
    for (const Sample& s : data.samples) {
      for (Index k = 0; k < s.label.size(); ++k) {
        if (s.label(k) != 0.0 && s.label(k) != 1.0) throw DataError("multi-task labels must be 0/1");
      }
    }
  } else {
    int max_label = 0;
    for (const Sample& s : data.samples) {
      const double v = s.label(0);
      if (v < 0.0 || v != std::floor(v)) throw DataError("class labels must be non-negative integers");
      max_label = std::max(max_label, static_cast<int>(v));
    }
    data.task_names = table.tasks;
    data.n_classes = std::max(2, max_label + 1);
    data.task_mode = data.n_classes > 2 ? TaskMode::Multiclass : TaskMode::Binary;
  }
  return data;
}

}  // namespace

std::vector<RawSeries> read_wide_csv(const std::filesystem::path& path,
                                     std::vector<std::string>* variable_names) {
  auto rows = read_csv_rows(path);
  const auto& header = rows[0];
  if (header.size() < 3 || header[0] != "series_id" || header[1] != "timestamp") {
    throw DataError(path.string() + ": header must be series_id,timestamp,<var1>,...");
  }
  const std::size_t dims = header.size() - 2;
  if (variable_names) variable_names->assign(header.begin() + 2, header.end());
  std::vector<RawSeries> series;
  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    if (row.size() != header.size()) throw DataError(path.string() + ": ragged row " + std::to_string(r));
    auto [it, inserted] = position.try_emplace(row[0], series.size());
    if (inserted) series.push_back(RawSeries{row[0], {}, {}});
    RawSeries& s = series[it->second];
    double ts = 0.0;
    if (!parse_cell(row[1], &ts)) throw DataError(path.string() + ": missing timestamp on row " + std::to_string(r));
    std::vector<double> reading(dims);
    for (std::size_t d = 0; d < dims; ++d) {
      double v = 0.0;
      reading[d] = parse_cell(row[d + 2], &v) ? v : missing_value();
    }
    s.timestamps.push_back(ts);
    s.readings.push_back(std::move(reading));
  }
  return series;
}

Dataset read_dataset(const std::filesystem::path& data_csv, const std::filesystem::path& labels_csv) {
  std::vector<std::string> names;
  auto raw = read_wide_csv(data_csv, &names);
  std::vector<Sample> samples;
  samples.reserve(raw.size());
  for (RawSeries& r : raw) {
    const auto steps = static_cast<Index>(r.timestamps.size());
    Vector ts = Eigen::Map<const Vector>(r.timestamps.data(), steps);
    Matrix values(steps, static_cast<Index>(names.size()));
    for (Index t = 0; t < steps; ++t) {
      for (Index d = 0; d < values.cols(); ++d) values(t, d) = r.readings[t][d];
    }
    samples.push_back(make_sample(r.id, std::move(ts), std::move(values), Vector()));
  }
  return assemble(std::move(samples), std::move(names), read_labels(labels_csv));
}

Dataset ingest_dataset(const std::filesystem::path& data_csv, const std::filesystem::path& labels_csv,
                       double bin_hours) {
  std::vector<std::string> names;
  auto raw = read_wide_csv(data_csv, &names);
  std::vector<Sample> samples;
  samples.reserve(raw.size());
  for (const RawSeries& r : raw) samples.push_back(resample(r, bin_hours));
  return assemble(std::move(samples), std::move(names), read_labels(labels_csv));
}

std::string format_data_csv(const Dataset& data) {
  std::string out = "series_id,timestamp";
  for (const auto& name : data.variable_names) out += "," + name;
  out += "\n";
  for (const Sample& s : data.samples) {
    for (Index t = 0; t < s.steps(); ++t) {
      out += s.id + "," + format_number(s.timestamps(t));
      for (Index d = 0; d < s.variables(); ++d) {
        out += ",";
        if (s.mask(t, d) > 0.5) out += format_number(s.values(t, d));
      }
      out += "\n";
    }
  }
  return out;
}

std::string format_labels_csv(const Dataset& data) {
  std::string out = "series_id";
  if (data.task_names.empty()) {
    out += ",label";
  } else {
    for (const auto& name : data.task_names) out += "," + name;
  }
  out += "\n";
  for (const Sample& s : data.samples) {
    out += s.id;
    for (Index k = 0; k < s.label.size(); ++k) out += "," + format_number(s.label(k));
    out += "\n";
  }
  return out;
}

}  // namespace decayrnn
