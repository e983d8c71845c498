#include "decayrnn/suite.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "decayrnn/format.hpp"

namespace decayrnn {

namespace fs = std::filesystem;

SyntheticConfig suite_synthetic_defaults() {
  SyntheticConfig s;
  s.class_separation = 0.08;
  s.amplitude_jitter = 1.0;
  return s;
}

TrainConfig suite_train_defaults() {
  TrainConfig t;
  t.learning_rate = 1e-2;
  t.batch_size = 16;
  t.max_epochs = 300;
  t.patience = 50;
  t.hidden = 16;
  return t;
}

namespace {

/// `base` with the fields present in `patch` replaced; unknown fields throw.
nlohmann::json overlay(nlohmann::json base, const nlohmann::json& patch, const std::string& what) {
  if (!patch.is_object()) throw ConfigError("suite config: " + what + " must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw ConfigError("unknown " + what + " config key: " + key);
    base[key] = value;
  }
  return base;
}

}  // namespace

nlohmann::json to_json(const SuiteConfig& cfg) {
  nlohmann::json kinds = nlohmann::json::array();
  for (CellKind k : cfg.kinds) kinds.push_back(to_string(k));
  nlohmann::json synthetic = to_json(cfg.synthetic);
  synthetic.erase("correlation_strength");
  return {{"kinds", kinds},
          {"correlations", cfg.correlations},
          {"synthetic", synthetic},
          {"train", to_json(cfg.train)},
          {"folds", cfg.folds},
          {"online",
           {{"kind", to_string(cfg.online_kind)},
            {"correlation", cfg.online_correlation},
            {"fractions", cfg.online_fractions}}}};
}

SuiteConfig suite_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{"kinds", "correlations", "synthetic", "train", "folds", "online"};
  if (!j.is_object()) throw ConfigError("suite config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!known.count(key)) throw ConfigError("unknown suite config key: " + key);
  }
  SuiteConfig cfg;
  try {
    if (j.contains("kinds")) {
      cfg.kinds.clear();
      for (const auto& k : j.at("kinds")) cfg.kinds.push_back(cell_kind_from_string(k.get<std::string>()));
    }
    cfg.correlations = j.value("correlations", cfg.correlations);
    if (j.contains("synthetic")) {
      cfg.synthetic = synthetic_config_from_json(overlay(to_json(cfg.synthetic), j.at("synthetic"), "synthetic"));
    }
    if (j.contains("train")) {
      nlohmann::json base = to_json(cfg.train);
      base["threads"] = cfg.train.threads;  // accepted but kept out of artifacts
      cfg.train = train_config_from_json(overlay(base, j.at("train"), "train"));
    }
    cfg.folds = j.value("folds", cfg.folds);
    if (j.contains("online")) {
      const auto& o = j.at("online");
      if (o.contains("kind")) cfg.online_kind = cell_kind_from_string(o.at("kind").get<std::string>());
      cfg.online_correlation = o.value("correlation", cfg.online_correlation);
      cfg.online_fractions = o.value("fractions", cfg.online_fractions);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("suite config: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ConfigError(std::string("suite config: ") + e.what());
  }
  if (cfg.kinds.empty() || cfg.correlations.empty()) throw ConfigError("suite config needs kinds and correlations");
  if (cfg.folds < 1) throw ConfigError("suite folds must be at least 1");
  return cfg;
}

namespace {

/// Tracks artifact checksums in manifest.json so completed work is skipped.
class Manifest {
 public:
  Manifest(fs::path root, std::string config_sha) : root_(std::move(root)), config_sha_(std::move(config_sha)) {
    const fs::path path = root_ / "manifest.json";
    if (!fs::exists(path)) return;
    try {
      const auto j = nlohmann::json::parse(read_file(path));
      if (j.value("config_sha256", "") != config_sha_) return;
      entries_ = j.at("artifacts").get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception&) {
      entries_.clear();
    }
  }

  bool present(const std::string& rel) const {
    auto it = entries_.find(rel);
    const fs::path path = root_ / rel;
    return it != entries_.end() && fs::exists(path) && sha256_hex(read_file(path)) == it->second;
  }

  void emit(const std::string& rel, const std::string& content) {
    const std::string sha = sha256_hex(content);
    auto it = entries_.find(rel);
    if (it != entries_.end() && it->second == sha && present(rel)) return;
    write_atomic(root_ / rel, content);
    entries_[rel] = sha;
    dirty_ = true;
  }

  void flush() {
    if (!dirty_ && fs::exists(root_ / "manifest.json")) return;
    const nlohmann::json j = {{"config_sha256", config_sha_}, {"artifacts", entries_}};
    write_atomic(root_ / "manifest.json", j.dump(1) + "\n");
    dirty_ = false;
  }

 private:
  fs::path root_;
  std::string config_sha_;
  std::map<std::string, std::string> entries_;
  bool dirty_ = false;
};

std::string setting_tag(double correlation) { return "corr_" + format_number(correlation); }

}  // namespace

SuiteResult run_suite(const SuiteConfig& cfg, const fs::path& out_dir) {
  validate(cfg.train);
  fs::create_directories(out_dir);
  const nlohmann::json config = to_json(cfg);
  Manifest manifest(out_dir, sha256_hex(config.dump()));
  SuiteResult result;
  auto track = [&](const std::string& rel) { result.artifacts.emplace_back(rel); };

  for (double corr : cfg.correlations) {
    const std::string tag = setting_tag(corr);
    fs::create_directories(out_dir / tag);
    SyntheticConfig syn = cfg.synthetic;
    syn.correlation_strength = corr;
    const Dataset data = generate_synthetic(syn);
    const nlohmann::json setting = {{"synthetic", to_json(syn)}, {"metadata", data.metadata}};
    const std::string comment = config_comment({{"suite", config}, {"setting", setting}});
    manifest.emit(tag + "/data.csv", comment + format_data_csv(data));
    manifest.emit(tag + "/labels.csv", comment + format_labels_csv(data));
    track(tag + "/data.csv");
    track(tag + "/labels.csv");

    for (CellKind kind : cfg.kinds) {
      const std::string rel = tag + "/cv_" + cli_name(kind) + ".json";
      const std::string model_rel = tag + "/model_" + cli_name(kind) + "_fold0.json";
      const bool online_cell = kind == cfg.online_kind && corr == cfg.online_correlation;
      SuiteCell cell;
      cell.kind = kind;
      cell.correlation = corr;
      if (manifest.present(rel) && (!online_cell || manifest.present(model_rel))) {
        const auto j = nlohmann::json::parse(read_file(out_dir / rel));
        cell.mean_auc = j.at("mean_auc").get<double>();
        cell.std_auc = j.at("std_auc").get<double>();
        cell.reused = true;
      } else {
        std::vector<Model> models;
        const CvReport report = cross_validate(kind, data, cfg.train, cfg.folds, &models);
        nlohmann::json j = to_json(report);
        j["config"] = {{"suite", config}, {"setting", setting}};
        manifest.emit(rel, j.dump(1) + "\n");
        if (online_cell) manifest.emit(model_rel, model_to_json(models.front()).dump(1) + "\n");
        cell.mean_auc = report.mean;
        cell.std_auc = report.std;
        ++result.computed;
      }
      track(rel);
      if (online_cell) track(model_rel);
      result.cells.push_back(cell);
    }
  }

  // Online prediction on the first fold's held-out samples.
  if (std::find(cfg.kinds.begin(), cfg.kinds.end(), cfg.online_kind) != cfg.kinds.end() &&
      std::find(cfg.correlations.begin(), cfg.correlations.end(), cfg.online_correlation) != cfg.correlations.end()) {
    const std::string tag = setting_tag(cfg.online_correlation);
    SyntheticConfig syn = cfg.synthetic;
    syn.correlation_strength = cfg.online_correlation;
    const Dataset data = generate_synthetic(syn);
    const Model model = load_model(out_dir / (tag + "/model_" + cli_name(cfg.online_kind) + "_fold0.json"));
    const FoldSplit fold0 = cv_splits(data, cfg.folds, cfg.train.seed).front();
    std::vector<const Sample*> test;
    double horizon = 0.0;
    for (const Sample& s : data.samples) horizon = std::max(horizon, s.timestamps.maxCoeff());
    for (std::size_t i : fold0.test) test.push_back(&data.samples[i]);
    std::vector<double> cutoffs;
    for (double f : cfg.online_fractions) cutoffs.push_back(f * horizon);
    result.online = online_eval(model, test, cutoffs);
    result.online_full_auc = evaluate_auc(model, test);

    const nlohmann::json online_config = {{"suite", config}, {"horizon_hours", horizon}};
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : result.online) {
      points.push_back({{"cutoff_hours", p.cutoff_hours},
                        {"auc", p.skipped ? nlohmann::json() : nlohmann::json(p.auc)},
                        {"skipped", p.skipped}});
    }
    const nlohmann::json online = {{"kind", to_string(cfg.online_kind)},
                                   {"correlation", cfg.online_correlation},
                                   {"fold", 0},
                                   {"full_auc", result.online_full_auc},
                                   {"points", points},
                                   {"config", online_config}};
    manifest.emit("online.json", online.dump(1) + "\n");
    manifest.emit("online_auc.csv", online_auc_csv(result.online, online_config));
    track("online.json");
    track("online_auc.csv");
  }

  std::string table = config_comment(config) + "kind,correlation,mean_auc,std_auc\n";
  for (const auto& c : result.cells) {
    table += to_string(c.kind) + "," + format_number(c.correlation) + "," + format_number(c.mean_auc) + "," +
             format_number(c.std_auc) + "\n";
  }
  manifest.emit("suite_auc.csv", table);
  track("suite_auc.csv");
  manifest.flush();
  result.artifacts.emplace_back("manifest.json");
  return result;
}

const SuiteCell& find_cell(const SuiteResult& result, CellKind kind, double correlation) {
  for (const auto& c : result.cells) {
    if (c.kind == kind && c.correlation == correlation) return c;
  }
  throw ArgumentError("suite has no cell for " + to_string(kind) + " at " + format_number(correlation));
}

}  // namespace decayrnn
