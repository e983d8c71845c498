#include "decayrnn/model.hpp"

#include "decayrnn/format.hpp"

namespace decayrnn {

Vector Model::flatten_trainable() const {
  const Vector c = cell.flatten();
  const Vector h = head.flatten();
  Vector flat(c.size() + h.size());
  flat << c, h;
  return flat;
}

void Model::unflatten_trainable(const Vector& flat) {
  const Index n = cell.size();
  if (flat.size() != n + head.trainable_size()) throw ArgumentError("Model::unflatten_trainable: size mismatch");
  cell.unflatten(flat.head(n));
  head.unflatten(flat.tail(flat.size() - n));
}

Model init_model(CellKind kind, Index vars, Index hidden, Index outputs, TaskMode mode, Rng& rng,
                 double decay_init_scale) {
  Model m;
  m.kind = kind;
  m.task_mode = mode;
  m.vars = vars;
  m.hidden = hidden;
  m.outputs = outputs;
  m.cell = init_cell_params(kind, vars, hidden, rng, decay_init_scale);
  m.head = init_head(hidden, outputs, rng);
  m.means = Vector::Zero(vars);
  m.norm = {Vector::Zero(vars), Vector::Ones(vars)};
  for (Index d = 0; d < vars; ++d) m.variable_names.push_back("v" + std::to_string(d));
  return m;
}

Matrix predict_normalized(const Model& model, const std::vector<const Sample*>& samples) {
  Matrix hidden(static_cast<Index>(samples.size()), model.hidden);
  for (std::size_t n = 0; n < samples.size(); ++n) {
    hidden.row(static_cast<Index>(n)) =
        forward_sequence(model.kind, model.cell, *samples[n], model.means).h_last.transpose();
  }
  return head_predict(model.head, hidden, model.task_mode, model.batch_norm);
}

Sample normalize_sample(const Model& model, const Sample& raw) {
  if (raw.variables() != model.vars) throw DataError("sample has " + std::to_string(raw.variables()) +
                                                    " variables, model expects " + std::to_string(model.vars));
  Sample s = raw;
  for (Index t = 0; t < s.steps(); ++t) {
    for (Index d = 0; d < s.variables(); ++d) {
      if (s.mask(t, d) > 0.5) s.values(t, d) = (s.values(t, d) - model.norm.mean(d)) / model.norm.std(d);
    }
  }
  return s;
}

Matrix predict(const Model& model, const std::vector<const Sample*>& raw_samples) {
  std::vector<Sample> normalized;
  normalized.reserve(raw_samples.size());
  for (const Sample* s : raw_samples) normalized.push_back(normalize_sample(model, *s));
  std::vector<const Sample*> ptrs;
  for (const Sample& s : normalized) ptrs.push_back(&s);
  return predict_normalized(model, ptrs);
}

namespace {

template <typename Block>
nlohmann::json block_to_json(const std::string& name, const Block& block) {
  return {{"name", name},
          {"rows", block.rows()},
          {"cols", block.cols()},
          {"data", std::vector<double>(block.data(), block.data() + block.size())}};
}

template <typename Block>
void block_from_json(const nlohmann::json& j, const std::string& name, Block& block) {
  if (j.at("name").get<std::string>() != name) {
    throw DataError("model file: expected block " + name + ", found " + j.at("name").get<std::string>());
  }
  const auto rows = j.at("rows").get<Index>();
  const auto cols = j.at("cols").get<Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Index>(data.size()) != rows * cols) throw DataError("model file: block " + name + " has wrong size");
  if constexpr (Block::ColsAtCompileTime == 1) {
    if (cols != 1 && rows * cols != 0) throw DataError("model file: block " + name + " must be a column vector");
    block = Eigen::Map<const Vector>(data.data(), rows * cols);
  } else {
    block = Eigen::Map<const Matrix>(data.data(), rows, cols);
  }
}

std::vector<double> to_std(const Vector& v) { return {v.data(), v.data() + v.size()}; }
Vector to_vector(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Index>(v.size()));
}

nlohmann::json model_card(CellKind kind) {
  const CellTraits t = traits(kind);
  nlohmann::json card = {
      {"masking_feed_through_V", t.feeds_mask},
      {"input_decay", t.input_decay},
      {"hidden_decay", t.hidden_decay},
      {"mask_decay", t.mask_decay},
      {"decay_form", "exp(-max(0, W*delta + b)), subgradient 0 at the kink"},
      {"head", "affine + per-unit batch norm; sigmoid units for binary/multi-task, softmax for multiclass"},
  };
  switch (t.input) {
    case InputRule::Mean: card["input"] = "mean imputation"; break;
    case InputRule::Forward: card["input"] = "forward fill (empirical mean before first observation)"; break;
    case InputRule::DecayToMean: card["input"] = "decay from last observation toward empirical mean"; break;
    case InputRule::Imputation:
      card["input"] = "imputed from mu = gamma * (W_impute h_prev + b_impute); test mode uses mu";
      card["regularizer"] = "lambda * mean observed-entry Gaussian negative log-likelihood";
      break;
  }
  return card;
}

}  // namespace

nlohmann::json model_to_json(const Model& model) {
  nlohmann::json blocks = nlohmann::json::array();
  model.cell.visit([&](const char* name, const auto& block) { blocks.push_back(block_to_json(name, block)); });
  nlohmann::json head = nlohmann::json::array();
  head.push_back(block_to_json("weight", model.head.weight));
  head.push_back(block_to_json("bias", model.head.bias));
  head.push_back(block_to_json("bn_scale", model.head.bn_scale));
  head.push_back(block_to_json("bn_shift", model.head.bn_shift));
  head.push_back(block_to_json("running_mean", model.head.running_mean));
  head.push_back(block_to_json("running_var", model.head.running_var));
  return {{"format", "decayrnn-model"},
          {"version", 1},
          {"kind", to_string(model.kind)},
          {"task_mode", to_string(model.task_mode)},
          {"vars", model.vars},
          {"hidden", model.hidden},
          {"outputs", model.outputs},
          {"batch_norm", model.batch_norm},
          {"variable_names", model.variable_names},
          {"cell", blocks},
          {"head", head},
          {"bn_updates", model.head.bn_updates},
          {"empirical_means", to_std(model.means)},
          {"norm_mean", to_std(model.norm.mean)},
          {"norm_std", to_std(model.norm.std)},
          {"model_card", model_card(model.kind)},
          {"provenance", model.provenance}};
}

Model model_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "decayrnn-model") throw DataError("not a decayrnn model file");
  Model m;
  m.kind = cell_kind_from_string(j.at("kind").get<std::string>());
  m.task_mode = task_mode_from_string(j.at("task_mode").get<std::string>());
  m.vars = j.at("vars").get<Index>();
  m.hidden = j.at("hidden").get<Index>();
  m.outputs = j.at("outputs").get<Index>();
  m.batch_norm = j.at("batch_norm").get<bool>();
  m.variable_names = j.at("variable_names").get<std::vector<std::string>>();
  const auto& blocks = j.at("cell");
  std::size_t k = 0;
  m.cell.visit([&](const char* name, auto& block) { block_from_json(blocks.at(k++), name, block); });
  const auto& head = j.at("head");
  block_from_json(head.at(0), "weight", m.head.weight);
  block_from_json(head.at(1), "bias", m.head.bias);
  block_from_json(head.at(2), "bn_scale", m.head.bn_scale);
  block_from_json(head.at(3), "bn_shift", m.head.bn_shift);
  block_from_json(head.at(4), "running_mean", m.head.running_mean);
  block_from_json(head.at(5), "running_var", m.head.running_var);
  m.head.bn_updates = j.value("bn_updates", 0LL);
  m.means = to_vector(j.at("empirical_means"));
  m.norm.mean = to_vector(j.at("norm_mean"));
  m.norm.std = to_vector(j.at("norm_std"));
  m.provenance = j.value("provenance", nlohmann::json::object());
  check_shapes(m.kind, m.cell, m.vars);
  if (m.head.weight.rows() != m.outputs || m.head.weight.cols() != m.hidden) throw DataError("model file: head shape mismatch");
  return m;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_atomic(path, model_to_json(model).dump(1) + "\n");
}

Model load_model(const std::filesystem::path& path) {
  return model_from_json(nlohmann::json::parse(read_file(path)));
}

}  // namespace decayrnn
