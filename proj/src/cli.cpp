#include "decayrnn/cli.hpp"

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "decayrnn/evaluation.hpp"
#include "decayrnn/format.hpp"
#include "decayrnn/suite.hpp"

namespace decayrnn {

namespace fs = std::filesystem;

namespace {

struct Flags {
  std::string data, labels, model, kind, config, out_dir, cutoffs, sizes;
  std::optional<long long> hidden, param_budget;
  std::optional<std::uint64_t> seed;
  std::optional<int> folds, vars, classes, samples, outputs, steps, bins;
  std::optional<double> correlation, rate, bin_hours;
};

std::vector<double> parse_list(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size()) {
      throw ConfigError(std::string("cannot parse ") + what + " entry '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string(what) + " list is empty");
  return out;
}

std::vector<CellKind> parse_kinds(const std::string& text) {
  std::vector<CellKind> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(cell_kind_from_string(item));
  }
  if (out.empty()) throw ConfigError("no cell kind given");
  return out;
}

nlohmann::json read_json(const std::string& path) {
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

TrainConfig resolve_train_config(const Flags& f) {
  TrainConfig cfg = f.config.empty() ? TrainConfig{} : train_config_from_json(read_json(f.config));
  if (f.seed) cfg.seed = *f.seed;
  if (f.hidden) cfg.hidden = *f.hidden;
  if (f.param_budget) cfg.param_budget = *f.param_budget;
  cfg.threads = std::max(cfg.threads, threads_from_env());
  validate(cfg);
  return cfg;
}

Dataset load_dataset(const Flags& f) {
  if (f.data.empty() || f.labels.empty()) throw ConfigError("--data and --labels are required");
  return read_dataset(f.data, f.labels);
}

std::vector<const Sample*> all_samples(const Dataset& data) {
  std::vector<const Sample*> out;
  for (const Sample& s : data.samples) out.push_back(&s);
  return out;
}

fs::path out_path(const Flags& f, const std::string& name) {
  return fs::path(f.out_dir.empty() ? "." : f.out_dir) / name;
}

nlohmann::json command_config(const std::string& command, const Flags& f) {
  nlohmann::json j = {{"command", command}};
  if (!f.data.empty()) j["data"] = f.data;
  if (!f.labels.empty()) j["labels"] = f.labels;
  if (!f.model.empty()) j["model"] = f.model;
  if (!f.kind.empty()) j["kind"] = f.kind;
  if (f.folds) j["folds"] = *f.folds;
  if (!f.cutoffs.empty()) j["cutoffs"] = f.cutoffs;
  if (!f.sizes.empty()) j["sizes"] = f.sizes;
  if (f.bins) j["bins"] = *f.bins;
  return j;
}

// --- commands ----------------------------------------------------------------

int cmd_generate(const Flags& f, std::ostream& out) {
  SyntheticConfig cfg = f.config.empty() ? SyntheticConfig{} : synthetic_config_from_json(read_json(f.config));
  if (f.samples) cfg.n_samples = *f.samples;
  if (f.vars) cfg.n_variables = *f.vars;
  if (f.classes) cfg.n_classes = *f.classes;
  if (f.rate) cfg.target_missing_rate = *f.rate;
  if (f.correlation) cfg.correlation_strength = *f.correlation;
  if (f.seed) cfg.seed = *f.seed;
  const Dataset data = generate_synthetic(cfg);
  const std::string comment = config_comment({{"command", "generate"}, {"metadata", data.metadata}});
  write_atomic(out_path(f, "data.csv"), comment + format_data_csv(data));
  write_atomic(out_path(f, "labels.csv"), comment + format_labels_csv(data));
  write_atomic(out_path(f, "metadata.json"), data.metadata.dump(1) + "\n");
  out << "generated " << data.samples.size() << " samples; missing rate "
      << format_human(data.metadata.at("achieved_missing_rate").get<double>()) << ", correlation "
      << format_human(data.metadata.at("achieved_correlation").get<double>()) << "\n";
  return kExitOk;
}

int cmd_ingest(const Flags& f, std::ostream& out) {
  if (f.data.empty() || f.labels.empty()) throw ConfigError("--data and --labels are required");
  const double bin = f.bin_hours.value_or(1.0);
  const Dataset data = ingest_dataset(f.data, f.labels, bin);
  nlohmann::json cfg = command_config("ingest", f);
  cfg["bin_hours"] = bin;
  write_atomic(out_path(f, "data.csv"), config_comment(cfg) + format_data_csv(data));
  write_atomic(out_path(f, "labels.csv"), config_comment(cfg) + format_labels_csv(data));
  out << "ingested " << data.samples.size() << " series into " << format_human(bin) << "h bins\n";
  return kExitOk;
}

int cmd_stats(const Flags& f, std::ostream& out) {
  const Dataset data = load_dataset(f);
  nlohmann::json j = to_json(dataset_stats(data));
  j["task_mode"] = to_string(data.task_mode);
  j["outputs"] = data.outputs();
  if (!f.out_dir.empty()) {
    nlohmann::json file = j;
    file["config"] = command_config("stats", f);
    write_atomic(out_path(f, "stats.json"), file.dump(1) + "\n");
  }
  out << j.dump(1) << "\n";
  return kExitOk;
}

int cmd_correlate(const Flags& f, std::ostream& out) {
  const Dataset data = load_dataset(f);
  const auto entries = missingness_label_correlation(data);
  if (!f.out_dir.empty()) write_atomic(out_path(f, "correlation.csv"), correlation_csv(entries, command_config("correlate", f)));
  for (const auto& e : entries) {
    out << e.variable << "\t" << e.task << "\t" << format_human(e.pearson_r) << (e.degenerate ? "\t(degenerate)" : "")
        << "\n";
  }
  return kExitOk;
}

int cmd_train(const Flags& f, std::ostream& out) {
  const Dataset data = load_dataset(f);
  const TrainConfig cfg = resolve_train_config(f);
  const CellKind kind = cell_kind_from_string(f.kind);
  std::vector<std::size_t> all(data.samples.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  Rng rng(cfg.seed, 0x747261696eULL);
  FoldSplit split;
  std::tie(split.train, split.validation) = stratified_holdout(data, all, 0.2, rng);
  TrainResult result = fit(kind, data, split, cfg);

  nlohmann::json cfg_json = command_config("train", f);
  cfg_json["train"] = to_json(cfg);
  result.model.provenance["command"] = cfg_json;
  save_model(result.model, out_path(f, "model.json"));
  write_atomic(out_path(f, "history.jsonl"),
               nlohmann::json{{"config", cfg_json}}.dump() + "\n" + history_jsonl(result.history));
  out << to_string(kind) << ": hidden " << result.model.hidden << ", best epoch " << result.best_epoch
      << ", validation AUC " << format_human(result.best_val_auc) << "\n";
  if (result.aborted) {
    out << "training aborted: " << result.abort_reason << " (best checkpoint saved)\n";
    return kExitNumerical;
  }
  return kExitOk;
}

int cmd_evaluate(const Flags& f, std::ostream& out) {
  if (f.model.empty()) throw ConfigError("--model is required");
  const Model model = load_model(f.model);
  const Dataset data = load_dataset(f);
  const auto samples = all_samples(data);
  const auto aucs = output_aucs(predict(model, samples), samples, model.task_mode);
  nlohmann::json per_output = nlohmann::json::array();
  for (std::size_t k = 0; k < aucs.size(); ++k) {
    per_output.push_back(aucs[k].valid ? nlohmann::json(aucs[k].value) : nlohmann::json());
    out << "output " << k << "\t" << (aucs[k].valid ? format_human(aucs[k].value) : std::string("undefined")) << "\n";
  }
  const double mean = mean_auc(aucs);
  out << "mean AUC\t" << format_human(mean) << "\n";
  if (!f.out_dir.empty()) {
    const nlohmann::json j = {{"output_auc", per_output}, {"mean_auc", mean}, {"config", command_config("evaluate", f)}};
    write_atomic(out_path(f, "evaluation.json"), j.dump(1) + "\n");
  }
  return kExitOk;
}

int cmd_cv(const Flags& f, std::ostream& out) {
  const Dataset data = load_dataset(f);
  const TrainConfig cfg = resolve_train_config(f);
  const CellKind kind = cell_kind_from_string(f.kind);
  const CvReport report = cross_validate(kind, data, cfg, f.folds.value_or(5));
  nlohmann::json j = to_json(report);
  j["config"] = command_config("cv", f);
  j["config"]["train"] = to_json(cfg);
  write_atomic(out_path(f, "cv.json"), j.dump(1) + "\n");
  out << to_string(kind) << ": AUC " << format_human(report.mean) << " +- " << format_human(report.std) << " over "
      << report.folds << " folds\n";
  for (const auto& fr : report.fold_results) {
    if (fr.aborted) {
      out << "fold " << fr.fold << " aborted: " << fr.abort_reason << "\n";
      return kExitNumerical;
    }
  }
  return kExitOk;
}

int cmd_online(const Flags& f, std::ostream& out) {
  if (f.model.empty()) throw ConfigError("--model is required");
  if (f.cutoffs.empty()) throw ConfigError("--cutoffs is required");
  const Model model = load_model(f.model);
  const Dataset data = load_dataset(f);
  const auto points = online_eval(model, all_samples(data), parse_list(f.cutoffs, "cutoffs"));
  const nlohmann::json cfg = command_config("online-eval", f);
  write_atomic(out_path(f, "online_auc.csv"), online_auc_csv(points, cfg));
  for (const auto& p : points) {
    out << format_human(p.cutoff_hours) << "h\t" << (p.skipped ? std::string("skipped (empty prefix)") : format_human(p.auc))
        << "\n";
  }
  return kExitOk;
}

int cmd_scaling(const Flags& f, std::ostream& out) {
  const Dataset data = load_dataset(f);
  const TrainConfig cfg = resolve_train_config(f);
  if (f.sizes.empty()) throw ConfigError("--sizes is required");
  std::vector<std::size_t> sizes;
  for (double s : parse_list(f.sizes, "sizes")) {
    if (s < 1 || s != std::floor(s)) throw ConfigError("sizes must be positive integers");
    sizes.push_back(static_cast<std::size_t>(s));
  }
  const auto cells = scaling_experiment(parse_kinds(f.kind), data, sizes, cfg, f.folds.value_or(5));
  nlohmann::json cfg_json = command_config("scaling", f);
  cfg_json["train"] = to_json(cfg);
  std::string csv = config_comment(cfg_json) + "kind,size,positive_rate,mean_auc,std_auc\n";
  nlohmann::json j = nlohmann::json::array();
  for (const auto& c : cells) {
    csv += to_string(c.kind) + "," + std::to_string(c.size) + "," + format_number(c.positive_rate) + "," +
           format_number(c.cv.mean) + "," + format_number(c.cv.std) + "\n";
    j.push_back({{"size", c.size}, {"positive_rate", c.positive_rate}, {"cv", to_json(c.cv)}});
    out << to_string(c.kind) << "\t" << c.size << "\t" << format_human(c.cv.mean) << " +- " << format_human(c.cv.std)
        << "\n";
  }
  write_atomic(out_path(f, "scaling.csv"), csv);
  write_atomic(out_path(f, "scaling.json"), nlohmann::json{{"cells", j}, {"config", cfg_json}}.dump(1) + "\n");
  return kExitOk;
}

int cmd_decay_report(const Flags& f, std::ostream& out) {
  if (f.model.empty()) throw ConfigError("--model is required");
  const Model model = load_model(f.model);
  const DecayReport report = decay_report(model, f.bins.value_or(10));
  const nlohmann::json cfg = command_config("decay-report", f);
  nlohmann::json j = to_json(report);
  j["config"] = cfg;
  write_atomic(out_path(f, "decay_report.json"), j.dump(1) + "\n");
  if (!report.curves.empty()) write_atomic(out_path(f, "decay_curves.csv"), decay_curves_csv(report, cfg));
  if (!report.hidden_histogram.empty()) {
    write_atomic(out_path(f, "hidden_decay_hist.csv"), hidden_decay_hist_csv(report, cfg));
  }
  for (const auto& c : report.curves) {
    out << c.variable << "\t" << report.curve_block << "(0)=" << format_human(c.gamma.front()) << "\t"
        << report.curve_block << "(24)=" << format_human(c.gamma.back()) << "\n";
  }
  if (!report.hidden_histogram.empty()) out << "hidden-decay histogram: " << report.hidden_histogram.size() << " bins\n";
  return kExitOk;
}

int cmd_param_count(const Flags& f, std::ostream& out) {
  if (!f.vars || !f.outputs) throw ConfigError("--vars and --outputs are required");
  const CellKind kind = cell_kind_from_string(f.kind);
  long long hidden = 0;
  if (f.hidden) {
    hidden = *f.hidden;
  } else if (f.param_budget) {
    hidden = size_for_budget(kind, *f.vars, *f.outputs, *f.param_budget);
  } else {
    throw ConfigError("--hidden or --param-budget is required");
  }
  if (hidden < 1 || *f.vars < 1 || *f.outputs < 1) throw ConfigError("sizes must be positive");
  const long long n = count_params(kind, *f.vars, hidden, *f.outputs);
  if (f.hidden) {
    out << n << "\n";
  } else {
    out << "hidden " << hidden << "\t" << n << "\n";
  }
  return kExitOk;
}

int cmd_grad_check(const Flags& f, std::ostream& out) {
  const CellKind kind = cell_kind_from_string(f.kind);
  GradientCheckDims dims;
  if (f.vars) dims.vars = *f.vars;
  if (f.hidden) dims.hidden = *f.hidden;
  if (f.steps) dims.steps = *f.steps;
  if (f.outputs) dims.outputs = *f.outputs;
  if (dims.outputs == 1) dims.task_mode = TaskMode::Binary;
  const auto report = gradient_check(kind, dims, f.seed.value_or(0));
  out << to_string(kind) << " seed " << report.seed << ": max rel err " << format_human(report.max_rel_error) << " ("
      << report.worst_block << ", " << report.parameters << " parameters)\n";
  for (const auto& [block, err] : report.per_block) out << "  " << block << "\t" << format_human(err) << "\n";
  return report.max_rel_error < 1e-5 ? kExitOk : kExitNumerical;
}

int cmd_suite(const Flags& f, std::ostream& out) {
  const SuiteConfig cfg = f.config.empty() ? SuiteConfig{} : suite_config_from_json(read_json(f.config));
  const SuiteResult result = run_suite(cfg, f.out_dir.empty() ? fs::path("suite") : fs::path(f.out_dir));
  for (const auto& c : result.cells) {
    out << to_string(c.kind) << "\tcorr " << format_human(c.correlation) << "\t" << format_human(c.mean_auc) << " +- "
        << format_human(c.std_auc) << (c.reused ? "\t(reused)" : "") << "\n";
  }
  for (const auto& p : result.online) {
    out << "online " << format_human(p.cutoff_hours) << "h\t" << (p.skipped ? std::string("skipped") : format_human(p.auc))
        << "\n";
  }
  out << result.computed << " cells computed\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Missingness-aware recurrent classifiers for irregular multivariate time series", "decayrnn"};
  app.require_subcommand(1);
  Flags f;

  auto data_flags = [&](CLI::App* sub) {
    sub->add_option("--data", f.data, "wide CSV: series_id,timestamp,<variables>")->check(CLI::ExistingFile);
    sub->add_option("--labels", f.labels, "labels CSV: series_id,<tasks>")->check(CLI::ExistingFile);
  };
  auto train_flags = [&](CLI::App* sub) {
    sub->add_option("--kind", f.kind, "cell kind (grud, gru-mean, ...)")->required();
    sub->add_option("--hidden", f.hidden, "hidden size");
    sub->add_option("--param-budget", f.param_budget, "size the hidden layer to this parameter count");
    sub->add_option("--seed", f.seed, "seed");
    sub->add_option("--config", f.config, "training config JSON")->check(CLI::ExistingFile);
  };
  auto out_flag = [&](CLI::App* sub) { sub->add_option("--out-dir", f.out_dir, "output directory"); };

  auto* generate = app.add_subcommand("generate", "generate a synthetic dataset");
  generate->add_option("--samples", f.samples);
  generate->add_option("--vars", f.vars);
  generate->add_option("--classes", f.classes);
  generate->add_option("--rate", f.rate, "target missing rate");
  generate->add_option("--correlation", f.correlation, "missingness/label correlation strength");
  generate->add_option("--seed", f.seed);
  generate->add_option("--config", f.config, "synthetic config JSON")->check(CLI::ExistingFile);
  out_flag(generate);

  auto* ingest = app.add_subcommand("ingest", "resample raw readings into regular bins");
  data_flags(ingest);
  ingest->add_option("--bin-hours", f.bin_hours, "bin width in hours (default 1)");
  out_flag(ingest);

  auto* stats = app.add_subcommand("stats", "dataset summary");
  data_flags(stats);
  out_flag(stats);

  auto* correlate = app.add_subcommand("correlate", "missing-rate / label correlation table");
  data_flags(correlate);
  out_flag(correlate);

  auto* train = app.add_subcommand("train", "train one model with a stratified validation holdout");
  data_flags(train);
  train_flags(train);
  out_flag(train);

  auto* evaluate = app.add_subcommand("evaluate", "AUC of a saved model");
  evaluate->add_option("--model", f.model)->check(CLI::ExistingFile);
  data_flags(evaluate);
  out_flag(evaluate);

  auto* cv = app.add_subcommand("cv", "stratified k-fold cross-validation");
  data_flags(cv);
  train_flags(cv);
  cv->add_option("--folds", f.folds, "number of folds (default 5)");
  out_flag(cv);

  auto* online = app.add_subcommand("online-eval", "AUC of prefix predictions per cutoff");
  online->add_option("--model", f.model)->check(CLI::ExistingFile);
  data_flags(online);
  online->add_option("--cutoffs", f.cutoffs, "comma-separated hours");
  out_flag(online);

  auto* scaling = app.add_subcommand("scaling", "cross-validation on stratified subsamples");
  data_flags(scaling);
  train_flags(scaling);
  scaling->add_option("--sizes", f.sizes, "comma-separated sample counts");
  scaling->add_option("--folds", f.folds);
  out_flag(scaling);

  auto* decay = app.add_subcommand("decay-report", "decay curves and hidden-decay histograms of a saved model");
  decay->add_option("--model", f.model)->check(CLI::ExistingFile);
  decay->add_option("--bins", f.bins, "histogram bins (default 10)");
  out_flag(decay);

  auto* params = app.add_subcommand("param-count", "number of trainable parameters");
  params->add_option("--kind", f.kind)->required();
  params->add_option("--vars", f.vars);
  params->add_option("--hidden", f.hidden);
  params->add_option("--param-budget", f.param_budget);
  params->add_option("--outputs", f.outputs);

  auto* grad = app.add_subcommand("grad-check", "compare BPTT with finite differences");
  grad->add_option("--kind", f.kind)->required();
  grad->add_option("--seed", f.seed);
  grad->add_option("--vars", f.vars);
  grad->add_option("--hidden", f.hidden);
  grad->add_option("--steps", f.steps);
  grad->add_option("--outputs", f.outputs);

  auto* suite = app.add_subcommand("suite", "resumable synthetic benchmark");
  suite->add_option("--config", f.config, "suite config JSON")->check(CLI::ExistingFile);
  out_flag(suite);

  std::vector<std::string> argv_storage{"decayrnn"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*generate) return cmd_generate(f, out);
    if (*ingest) return cmd_ingest(f, out);
    if (*stats) return cmd_stats(f, out);
    if (*correlate) return cmd_correlate(f, out);
    if (*train) return cmd_train(f, out);
    if (*evaluate) return cmd_evaluate(f, out);
    if (*cv) return cmd_cv(f, out);
    if (*online) return cmd_online(f, out);
    if (*scaling) return cmd_scaling(f, out);
    if (*decay) return cmd_decay_report(f, out);
    if (*params) return cmd_param_count(f, out);
    if (*grad) return cmd_grad_check(f, out);
    if (*suite) return cmd_suite(f, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArgumentError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace decayrnn
