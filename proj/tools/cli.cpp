#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

namespace slicemoa::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Typed field access that reports failures with the field's dotted path.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  bool has(const std::string& key) const {
    used_.insert(key);
    return j_.contains(key);
  }

  template <class T>
  T get(const std::string& key) const {
    used_.insert(key);
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(field(key) + ": " + (j_.contains(key) ? "wrong type" : "missing"));
    }
  }

  template <class T>
  T get_or(const std::string& key, T fallback) const {
    return has(key) ? get<T>(key) : fallback;
  }

  Fields object(const std::string& key) const {
    used_.insert(key);
    if (!j_.contains(key)) throw ConfigError(field(key) + ": missing");
    return Fields(j_.at(key), field(key));
  }

  const json& raw(const std::string& key) const {
    used_.insert(key);
    return j_.at(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  /// Rejects keys that were never looked at, which catches misspelled fields.
  void reject_unknown() const {
    for (const auto& [key, value] : j_.items()) {
      if (!used_.count(key)) throw ConfigError(field(key) + ": unknown field");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "config: " : path_ + ": "; }

  const json& j_;
  std::string path_;
  mutable std::set<std::string> used_;
};

template <class F>
auto field_guard(const std::string& field, F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    throw ConfigError(field + ": " + e.what());
  } catch (const ParameterError& e) {
    throw ConfigError(field + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << text;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create directory '" + dir.string() + "': " + ec.message());
}

std::vector<Metric> report_metrics(std::size_t num_classes) {
  if (num_classes == 2) return {Metric::f1, Metric::mcc};
  return {Metric::accuracy, Metric::f1};
}

std::size_t split_index(const std::string& name) {
  if (name == "train") return 0;
  if (name == "val") return 1;
  if (name == "test") return 2;
  throw ConfigError("unknown split '" + name + "' (train|val|test)");
}

ModelConfig model_config(const RunConfig& cfg, const PreparedData& data) {
  ModelConfig mc;
  mc.kind = cfg.model_kind;
  mc.input_dim = data.dim;
  mc.num_slices = data.schema.size();
  mc.num_classes = data.labels.size();
  mc.hidden = cfg.hidden;
  mc.dropout = cfg.dropout;
  mc.bias = cfg.bias;
  mc.moa = cfg.moa;
  mc.validate();
  return mc;
}

ModelMetadata metadata(const RunConfig& cfg, const PreparedData& data) {
  return ModelMetadata{model_config(cfg, data), cfg.slices, cfg.slice_options, data.labels, data.backbone};
}

SliceReport evaluate(const SliceModel& model, const LabeledSplit& split, const std::string& name,
                     const std::vector<std::string>& slice_names, F1Average average) {
  const auto preds = predict(model, split);
  SliceReport report{name, slice_names, {}, std::nullopt};
  for (Metric m : report_metrics(model.config().num_classes)) {
    report.rows.push_back(per_slice(m, preds, split.labels, split.memberships, model.config().num_slices,
                                    model.config().num_classes, average));
  }
  return report;
}

/// Mean over reports; a slice cell averages the runs where the slice was non-empty.
SliceReport mean_report(const std::vector<SliceReport>& runs) {
  SliceReport out = runs.front();
  for (std::size_t m = 0; m < out.rows.size(); ++m) {
    MetricRow& row = out.rows[m];
    row.overall = 0.0;
    for (const auto& r : runs) row.overall += r.rows[m].overall;
    row.overall /= static_cast<double>(runs.size());
    for (std::size_t s = 0; s < row.slices.size(); ++s) {
      double total = 0.0;
      std::size_t n = 0;
      for (const auto& r : runs) {
        if (r.rows[m].slices[s]) {
          total += *r.rows[m].slices[s];
          ++n;
        }
      }
      row.slices[s] = n == 0 ? std::nullopt : std::optional<double>(total / static_cast<double>(n));
    }
  }
  return out;
}

json report_json(const SliceReport& report) {
  json metrics = json::object();
  for (const auto& row : report.rows) {
    json slices = json::object();
    for (std::size_t s = 0; s < row.slices.size(); ++s) {
      slices[report.slice_names[s]] = row.slices[s] ? json(*row.slices[s]) : json(nullptr);
    }
    metrics[std::string(to_string(row.metric))] = {{"overall", row.overall}, {"slices", slices}};
  }
  return metrics;
}

std::vector<SliceReport> read_reports(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open report '" + path.string() + "'");
  return read_report_jsonl(in);
}

void check_compatible(const ModelMetadata& meta, const RunConfig& cfg, const PreparedData& data, const fs::path& ckpt) {
  const std::string where = "checkpoint '" + ckpt.string() + "': ";
  if (meta.slices != cfg.slices) throw ContractError(where + "slice schema differs from the configuration");
  if (meta.slice_options.case_insensitive != cfg.slice_options.case_insensitive) {
    throw ContractError(where + "slice case sensitivity differs from the configuration");
  }
  if (meta.config.input_dim != data.dim) {
    throw ContractError(where + "input dimension " + std::to_string(meta.config.input_dim) + " vs backbone " +
                        std::to_string(data.dim));
  }
  if (meta.labels != data.labels) throw ContractError(where + "label vocabulary differs from the data");
}

std::vector<fs::path> default_checkpoints(const RunConfig& cfg) {
  std::vector<fs::path> out;
  for (std::size_t r = 0; r < cfg.runs; ++r) out.push_back(cfg.checkpoint(r));
  return out;
}

std::string bar(double p, std::size_t width = 20) {
  const auto filled = static_cast<std::size_t>(p * static_cast<double>(width) + 0.5);
  return std::string(std::min(filled, width), '#') + std::string(width - std::min(filled, width), '.');
}

}  // namespace

void RunConfig::validate() const {
  if (backbone.cache.has_value() == backbone.hashing.has_value()) {
    throw ConfigError("backbone: exactly one of 'cache' or 'hashing' must be given");
  }
  if (data.path.has_value() == (data.train.has_value() || data.val.has_value() || data.test.has_value())) {
    throw ConfigError("data: give either 'path' or all of 'train', 'val', 'test'");
  }
  if (!data.path && !(data.train && data.val && data.test)) {
    throw ConfigError("data: 'train', 'val' and 'test' must all be given");
  }
  if (runs == 0) throw ConfigError("runs must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model.dropout must be in [0, 1)");
  if (hidden == 0) throw ConfigError("model.hidden must be positive");
  field_guard("moa.tau", [&] {
    if (!(moa.tau > 0.0)) throw ConfigError("must be positive");
    return 0;
  });
  train.validate();
}

RunConfig parse_run_config(const json& j, const fs::path& base_dir) {
  RunConfig cfg;
  const Fields root(j, "");

  const Fields data = root.object("data");
  if (data.has("path")) cfg.data.path = resolve(base_dir, data.get<std::string>("path"));
  if (data.has("train")) cfg.data.train = resolve(base_dir, data.get<std::string>("train"));
  if (data.has("val")) cfg.data.val = resolve(base_dir, data.get<std::string>("val"));
  if (data.has("test")) cfg.data.test = resolve(base_dir, data.get<std::string>("test"));
  cfg.data.load.format = field_guard(data.field("format"),
                                     [&] { return parse_dataset_format(data.get_or<std::string>("format", "tsv")); });
  cfg.data.load.text_col = data.get_or<std::string>("text_col", "text");
  cfg.data.load.label_col = data.get_or<std::string>("label_col", "label");
  cfg.data.load.id_col = data.get_or<std::string>("id_col", "id");
  cfg.data.load.lowercase = data.get_or<bool>("lowercase", false);
  if (data.has("split_fractions") && data.has("split_counts")) {
    throw ConfigError("data: give at most one of 'split_fractions' and 'split_counts'");
  }
  if (data.has("split_fractions")) {
    cfg.data.split = SplitSpec::from_fractions(data.get<std::vector<double>>("split_fractions"));
  }
  if (data.has("split_counts")) {
    cfg.data.split = SplitSpec::from_counts(data.get<std::vector<std::size_t>>("split_counts"));
  }
  cfg.data.split_seed = data.get_or<std::uint64_t>("split_seed", 0);
  data.reject_unknown();

  const Fields backbone = root.object("backbone");
  if (backbone.has("cache")) cfg.backbone.cache = resolve(base_dir, backbone.get<std::string>("cache"));
  if (backbone.has("hashing")) cfg.backbone.hashing = backbone.get<std::size_t>("hashing");
  backbone.reject_unknown();

  if (root.has("slices")) {
    const json& list = root.raw("slices");
    if (!list.is_array()) throw ConfigError("slices: expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const Fields s(list[i], "slices[" + std::to_string(i) + "]");
      SliceSpec spec;
      spec.name = s.get<std::string>("name");
      spec.builtin = s.get_or<std::string>("builtin", spec.name);
      if (s.has("params")) {
        const Fields params = s.object("params");
        for (const auto& [key, value] : s.raw("params").items()) {
          if (value.is_string()) {
            spec.params[key] = value.get<std::string>();
          } else if (value.is_number_integer()) {
            spec.params[key] = std::to_string(value.get<long long>());
          } else {
            throw ConfigError(params.field(key) + ": expected a string or integer");
          }
        }
      }
      s.reject_unknown();
      cfg.slices.push_back(std::move(spec));
    }
  }
  cfg.slice_options.case_insensitive = root.get_or<bool>("slice_case_insensitive", true);
  cfg.slice_on_normalized = root.get_or<bool>("slice_on_normalized", false);

  if (root.has("model")) {
    const Fields model = root.object("model");
    cfg.model_kind = field_guard(model.field("kind"),
                                 [&] { return parse_model_kind(model.get_or<std::string>("kind", "sbl-moa")); });
    cfg.hidden = model.get_or<std::size_t>("hidden", cfg.hidden);
    cfg.dropout = model.get_or<double>("dropout", cfg.dropout);
    cfg.bias = model.get_or<bool>("bias", cfg.bias);
    model.reject_unknown();
  }

  if (root.has("moa")) {
    const Fields moa = root.object("moa");
    cfg.moa.phi = field_guard(moa.field("phi"), [&] { return parse_phi(moa.get_or<std::string>("phi", "softmax")); });
    cfg.moa.combine_op = field_guard(moa.field("combine_op"),
                                     [&] { return parse_combine_op(moa.get_or<std::string>("combine_op", "mul")); });
    cfg.moa.tau = moa.get_or<double>("tau", cfg.moa.tau);
    cfg.moa.use_expert_confidence = moa.get_or<bool>("expert_confidence", false);
    cfg.moa.stochastic_eval = moa.get_or<bool>("stochastic_eval", false);
    moa.reject_unknown();
  }

  if (root.has("train")) {
    const Fields t = root.object("train");
    cfg.train.lr = t.get_or<double>("lr", cfg.train.lr);
    cfg.train.weight_decay = t.get_or<double>("weight_decay", cfg.train.weight_decay);
    cfg.train.max_epochs = t.get_or<std::size_t>("max_epochs", cfg.train.max_epochs);
    cfg.train.patience = t.get_or<std::size_t>("patience", cfg.train.patience);
    cfg.train.batch_size = t.get_or<std::size_t>("batch_size", cfg.train.batch_size);
    if (t.has("selection_metric")) {
      cfg.train.selection_metric =
          field_guard(t.field("selection_metric"), [&] { return parse_metric(t.get<std::string>("selection_metric")); });
    }
    if (t.has("f1_average")) {
      const auto avg = t.get<std::string>("f1_average");
      if (avg != "macro" && avg != "weighted") throw ConfigError(t.field("f1_average") + ": expected macro|weighted");
      cfg.train.f1_average = avg == "macro" ? F1Average::macro : F1Average::weighted;
    }
    t.reject_unknown();
  }

  cfg.train.seed = root.get_or<std::uint64_t>("seed", 0);
  cfg.runs = root.get_or<std::size_t>("runs", 1);
  if (root.has("name")) cfg.name = root.get<std::string>("name");
  cfg.output_dir = resolve(base_dir, root.get_or<std::string>("output_dir", "out"));
  root.reject_unknown();
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config '" + path.string() + "': " + e.what());
  }
  return parse_run_config(j, path.parent_path());
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.model) cfg.model_kind = field_guard("--model", [&] { return parse_model_kind(*o.model); });
  if (o.phi) cfg.moa.phi = field_guard("--phi", [&] { return parse_phi(*o.phi); });
  if (o.combine_op) cfg.moa.combine_op = field_guard("--combine-op", [&] { return parse_combine_op(*o.combine_op); });
  if (o.tau) cfg.moa.tau = *o.tau;
  if (o.seed) cfg.train.seed = *o.seed;
  if (o.runs) cfg.runs = *o.runs;
  if (o.output_dir) cfg.output_dir = *o.output_dir;
  if (o.expert_confidence) cfg.moa.use_expert_confidence = true;
  if (o.stochastic_eval) cfg.moa.stochastic_eval = true;
  cfg.validate();
}

PreparedData prepare_data(const RunConfig& cfg, bool embed) {
  PreparedData out;
  LoadOptions load = cfg.data.load;
  // Text is kept as stored; normalization is applied per consumer below.
  load.lowercase = false;
  if (cfg.data.path) {
    TextDataset all = load_dataset(*cfg.data.path, load);
    const SplitResult split = stratified_split(all.label_indices(), all.num_classes(), cfg.data.split, cfg.data.split_seed);
    if (split.parts.size() != 3) throw ConfigError("data: the split must have exactly three parts (train, val, test)");
    for (const auto& part : split.parts) out.splits.push_back(all.subset(part));
    out.labels = all.labels;
  } else {
    out.splits.push_back(load_dataset(*cfg.data.train, load));
    load.vocabulary = out.splits[0].labels;
    out.splits.push_back(load_dataset(*cfg.data.val, load));
    out.splits.push_back(load_dataset(*cfg.data.test, load));
    out.labels = out.splits[0].labels;
  }
  std::set<std::string> seen;
  for (const auto& split : out.splits) {
    for (const auto& r : split.records) {
      if (!seen.insert(r.id).second) throw DataError("data: id '" + r.id + "' appears in more than one split");
    }
  }

  out.schema = build_schema(cfg.slices, SliceRegistry::with_builtins(), cfg.slice_options);

  std::unique_ptr<Backbone> backbone;
  if (cfg.backbone.hashing) {
    backbone = std::make_unique<HashingBackbone>(*cfg.backbone.hashing);
    out.backbone = "hashing:" + std::to_string(*cfg.backbone.hashing);
  } else {
    backbone = std::make_unique<CacheBackbone>(read_cache(*cfg.backbone.cache));
    out.backbone = "cache";
  }
  out.dim = backbone->dim();

  for (const auto& split : out.splits) {
    LabeledSplit ls;
    ls.dim = out.dim;
    std::vector<Record> normalized;
    for (const auto& r : split.records) {
      const std::string norm = cfg.data.load.lowercase ? text::to_lower(r.text) : r.text;
      ls.memberships.push_back(out.schema.assign(cfg.slice_on_normalized ? norm : r.text));
      ls.labels.push_back(r.label);
      normalized.push_back(Record{r.id, norm, r.label});
    }
    if (embed) ls.features = embed_all(*backbone, normalized);
    out.labeled.push_back(std::move(ls));
  }
  return out;
}

std::string model_name(const ModelMetadata& meta) {
  const ModelConfig& c = meta.config;
  switch (c.kind) {
    case ModelKind::baseline: return "Baseline";
    case ModelKind::sbl: return "SBL";
    case ModelKind::sbl_moa: break;
  }
  std::string name = "SBL-MoA";
  if (c.moa.phi == Phi::gumbel_soft) name += "-S";
  if (c.moa.phi == Phi::gumbel_hard) name += "-H";
  return name + (c.moa.combine_op == CombineOp::add ? " add" : " mul");
}

int cmd_slices(const RunConfig& cfg, std::ostream& out) {
  const PreparedData data = prepare_data(cfg, false);
  const auto names = data.schema.names();
  const std::size_t k = names.size();
  static const char* kSplitNames[] = {"train", "val", "test"};

  std::ostringstream tsv;
  tsv << "id\tsplit";
  for (const auto& n : names) tsv << '\t' << n;
  tsv << '\n';
  std::vector<std::size_t> sizes(k, 0);
  std::vector<std::size_t> overlap(k * k, 0);
  std::size_t n = 0;
  for (std::size_t s = 0; s < data.splits.size(); ++s) {
    for (std::size_t i = 0; i < data.splits[s].size(); ++i) {
      const auto& gamma = data.labeled[s].memberships[i];
      tsv << data.splits[s].records[i].id << '\t' << kSplitNames[s];
      for (auto g : gamma) tsv << '\t' << static_cast<int>(g);
      tsv << '\n';
      for (std::size_t a = 0; a < k; ++a) {
        sizes[a] += gamma[a];
        for (std::size_t b = 0; b < k; ++b) overlap[a * k + b] += gamma[a] && gamma[b];
      }
      ++n;
    }
  }
  ensure_dir(cfg.output_dir);
  write_text(cfg.output_dir / "memberships.tsv", tsv.str());

  std::size_t width = 5;
  for (const auto& name : names) width = std::max(width, name.size());
  auto pad = [&](std::string s) {
    s.resize(std::max(width, s.size()), ' ');
    return s;
  };
  out << "samples: " << n << '\n';
  auto right = [](std::string s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 0, ' ') + s; };
  out << pad("slice") << "  " << right("count", 8) << "  fraction\n";
  for (std::size_t a = 0; a < k; ++a) {
    out << pad(names[a]) << "  " << right(std::to_string(sizes[a]), 8) << "  "
        << fixed(n == 0 ? 0.0 : static_cast<double>(sizes[a]) / static_cast<double>(n), 4) << '\n';
  }
  out << "overlaps:\n" << pad("");
  for (const auto& name : names) out << "  " << right(name, std::max<std::size_t>(8, name.size()));
  out << '\n';
  for (std::size_t a = 0; a < k; ++a) {
    out << pad(names[a]);
    for (std::size_t b = 0; b < k; ++b) {
      out << "  " << right(std::to_string(overlap[a * k + b]), std::max<std::size_t>(8, names[b].size()));
    }
    out << '\n';
  }
  out << "memberships written to " << (cfg.output_dir / "memberships.tsv").string() << '\n';
  return kExitOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out) {
  // Embedding every split here surfaces missing cache ids before the first epoch.
  const PreparedData data = prepare_data(cfg, true);
  const ModelMetadata meta = metadata(cfg, data);
  const std::string name = cfg.name.value_or(model_name(meta));
  const auto names = data.schema.names();
  const std::vector<std::string> slice_names(names.begin() + 1, names.end());

  json runs = json::array();
  std::vector<SliceReport> test_reports;
  for (std::size_t r = 0; r < cfg.runs; ++r) {
    const std::uint64_t seed = cfg.run_seed(r);
    ensure_dir(cfg.run_dir(r));
    Rng init(seed, "init");
    SliceModel model(meta.config, init);
    TrainConfig tc = cfg.train;
    tc.seed = seed;

    const std::string val_metric(to_string(tc.selection_for(meta.config.num_classes)));
    std::ostringstream log;
    const TrainResult result = train(model, data.labeled[0], data.labeled[1], tc, [&](const EpochRecord& e) {
      log << json{{"epoch", e.epoch},
                  {"loss", e.loss},
                  {"indicator_loss", e.indicator_loss},
                  {"expert_loss", e.expert_loss},
                  {"task_loss", e.task_loss},
                  {"val_metric", val_metric},
                  {"val_score", e.val_score},
                  {"best_score", e.best_score}}
                 .dump()
          << '\n';
    });
    write_text(cfg.run_dir(r) / "train_log.jsonl", log.str());
    save_checkpoint(cfg.checkpoint(r), model, meta);

    SliceReport test = evaluate(model, data.labeled[2], name, slice_names, cfg.train.f1_average);
    runs.push_back({{"run", r},
                    {"seed", seed},
                    {"epochs", result.history.size()},
                    {"best_epoch", result.best_epoch},
                    {"val_metric", std::string(to_string(result.selection_metric))},
                    {"val_score", result.best_score},
                    {"checkpoint", cfg.checkpoint(r).filename().string()},
                    {"test", report_json(test)}});
    out << "run " << r << " (seed " << seed << "): " << result.history.size() << " epochs, best epoch "
        << result.best_epoch << ", val " << to_string(result.selection_metric) << " " << fixed(result.best_score, 4);
    for (const auto& row : test.rows) out << ", test " << to_string(row.metric) << " " << fixed(row.overall, 4);
    out << '\n';
    test_reports.push_back(std::move(test));
  }

  const SliceReport mean = mean_report(test_reports);
  const json summary{{"model", name}, {"runs", runs}, {"mean_test", report_json(mean)}};
  write_text(cfg.output_dir / "train_summary.json", summary.dump(2) + "\n");
  out << "mean over " << cfg.runs << " run(s):\n" << render_table({mean});
  return kExitOk;
}

SliceReport evaluate_checkpoints(const RunConfig& cfg, const EvalOptions& opt) {
  const PreparedData data = prepare_data(cfg, true);
  const LabeledSplit& split = data.labeled.at(split_index(opt.split));
  const auto checkpoints = opt.checkpoints.empty() ? default_checkpoints(cfg) : opt.checkpoints;
  const auto names = data.schema.names();
  const std::vector<std::string> slice_names(names.begin() + 1, names.end());

  std::vector<SliceReport> reports;
  std::string name;
  for (const auto& path : checkpoints) {
    LoadedModel loaded = load_checkpoint(path);
    check_compatible(loaded.meta, cfg, data, path);
    if (name.empty()) name = cfg.name.value_or(model_name(loaded.meta));
    reports.push_back(evaluate(loaded.model, split, name, slice_names, cfg.train.f1_average));
  }
  SliceReport report = mean_report(reports);
  if (opt.baseline_report) {
    const auto baselines = read_reports(*opt.baseline_report);
    if (baselines.empty()) throw DataError("baseline report '" + opt.baseline_report->string() + "' is empty");
    attach_lift(report, baselines.front(), opt.lift_mode);
  }
  return report;
}

int cmd_eval(const RunConfig& cfg, const EvalOptions& opt, std::ostream& out) {
  const SliceReport report = evaluate_checkpoints(cfg, opt);
  ensure_dir(cfg.output_dir);
  std::ostringstream jsonl;
  write_report_jsonl(jsonl, report);
  const std::string table = render_table({report});
  write_text(cfg.output_dir / "report.jsonl", jsonl.str());
  write_text(cfg.output_dir / "report.txt", table);
  out << table;
  return kExitOk;
}

int cmd_report(const ReportOptions& opt, std::ostream& out) {
  std::vector<SliceReport> reports;
  std::optional<SliceReport> baseline;
  if (opt.baseline_report) {
    auto loaded = read_reports(*opt.baseline_report);
    if (loaded.empty()) throw DataError("baseline report '" + opt.baseline_report->string() + "' is empty");
    baseline = loaded.front();
    baseline->baseline.reset();
    reports.push_back(*baseline);
  }
  for (const auto& path : opt.reports) {
    for (auto& r : read_reports(path)) {
      if (baseline && r.model == baseline->model) continue;
      reports.push_back(std::move(r));
    }
  }
  if (reports.empty()) throw ConfigError("report: no reports given");
  if (opt.baseline) {
    auto it = std::find_if(reports.begin(), reports.end(), [&](const SliceReport& r) { return r.model == *opt.baseline; });
    if (it == reports.end()) throw ConfigError("--baseline: no report for model '" + *opt.baseline + "'");
    if (baseline && baseline->model != *opt.baseline) {
      throw ConfigError("--baseline and --baseline-report name different models");
    }
    baseline = *it;
    baseline->baseline.reset();
  }
  if (baseline) {
    for (auto& r : reports) {
      if (r.model == baseline->model) {
        r.baseline.reset();
        r.rows = baseline->rows;
        for (auto& row : r.rows) row.avg_lift = row.max_lift = std::nullopt;
      } else {
        attach_lift(r, *baseline, opt.lift_mode);
      }
    }
  }
  const std::string table = render_table(reports);
  if (opt.out) {
    std::ostringstream jsonl;
    for (const auto& r : reports) write_report_jsonl(jsonl, r);
    write_text(*opt.out, jsonl.str());
  }
  out << table;
  return kExitOk;
}

int cmd_attention(const RunConfig& cfg, const AttentionOptions& opt, std::ostream& out) {
  const PreparedData data = prepare_data(cfg, true);
  const fs::path path = opt.checkpoint.value_or(cfg.checkpoint(0));
  LoadedModel loaded = load_checkpoint(path);
  check_compatible(loaded.meta, cfg, data, path);
  if (loaded.meta.config.kind != ModelKind::sbl_moa) {
    throw ContractError("attention: checkpoint '" + path.string() + "' is a " +
                        std::string(to_string(loaded.meta.config.kind)) + " model; sbl-moa is required");
  }
  // Display uses the deterministic phi regardless of how the model evaluates.
  ModelConfig display = loaded.meta.config;
  display.moa.stochastic_eval = false;
  Rng unused(0);
  SliceModel model(display, unused);
  std::vector<NamedTensor> tensors;
  for (const auto& p : loaded.model.parameters()) tensors.push_back({p.name, p.value.shape(), p.value.values()});
  load_parameters(model, tensors);

  const std::size_t s = split_index(opt.split);
  const TextDataset& ds = data.splits[s];
  const LabeledSplit& ls = data.labeled[s];
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < ds.size(); ++i) by_id.emplace(ds.records[i].id, i);
  std::vector<std::size_t> rows;
  if (opt.ids.empty()) {
    for (std::size_t i = 0; i < ds.size(); ++i) rows.push_back(i);
  } else {
    for (const auto& id : opt.ids) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw DataError("attention: unknown sample id '" + id + "' in the " + opt.split + " split");
      rows.push_back(it->second);
    }
  }

  const auto names = data.schema.names();
  const std::size_t k = names.size();
  std::size_t width = 0;
  for (const auto& n : names) width = std::max(width, n.size());
  std::ostringstream jsonl;
  for (std::size_t start = 0; start < rows.size(); start += 512) {
    const std::span<const std::size_t> batch(rows.data() + start, std::min<std::size_t>(512, rows.size() - start));
    const ForwardTrace t = model.forward(ls.batch_features(batch));
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const std::size_t i = batch[b];
      const auto p1 = t.p1.data().subspan(b * k, k);
      const auto p2 = t.p2.data().subspan(b * k, k);
      std::vector<int> gamma(ls.memberships[i].begin(), ls.memberships[i].end());
      jsonl << json{{"id", ds.records[i].id},
                    {"text", ds.records[i].text},
                    {"label", data.labels[ds.records[i].label]},
                    {"slices", names},
                    {"gamma", gamma},
                    {"p1", std::vector<double>(p1.begin(), p1.end())},
                    {"p2", std::vector<double>(p2.begin(), p2.end())}}
                   .dump()
            << '\n';
      out << ds.records[i].id << "  " << ds.records[i].text << '\n';
      for (std::size_t j = 0; j < k; ++j) {
        std::string n = names[j];
        n.resize(width, ' ');
        out << "  " << n << "  gamma " << gamma[j] << "  p1 " << bar(p1[j]) << ' ' << fixed(p1[j], 3) << "  p2 "
            << bar(p2[j]) << ' ' << fixed(p2[j], 3) << '\n';
      }
    }
  }
  ensure_dir(cfg.output_dir);
  write_text(cfg.output_dir / "attention.jsonl", jsonl.str());
  return kExitOk;
}

namespace {

std::vector<std::string> split_ids(const std::vector<std::string>& raw) {
  std::vector<std::string> out;
  for (const auto& item : raw) {
    std::stringstream ss(item);
    std::string id;
    while (std::getline(ss, id, ',')) {
      if (!id.empty()) out.push_back(id);
    }
  }
  return out;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Slice-based learning with a mixture of attentions", "slicemoa"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  std::optional<std::string> output_dir;
  auto add_common = [&](CLI::App* cmd, bool training_flags) {
    cmd->add_option("--config", config_path, "run configuration (JSON)")->required();
    cmd->add_option("--output-dir", output_dir, "output directory (overrides the config)");
    cmd->add_option("--model", ov.model, "baseline|sbl|sbl-moa");
    cmd->add_option("--phi", ov.phi, "softmax|gumbel-soft|gumbel-hard");
    cmd->add_option("--combine-op", ov.combine_op, "add|mul");
    cmd->add_option("--tau", ov.tau, "Gumbel temperature");
    cmd->add_option("--seed", ov.seed, "base seed; run r uses seed + r");
    cmd->add_option("--runs", ov.runs, "number of independent runs");
    if (training_flags) {
      cmd->add_flag("--expert-confidence", ov.expert_confidence, "add |expert logit| to membership logits");
      cmd->add_flag("--stochastic-eval", ov.stochastic_eval, "keep Gumbel sampling at evaluation time");
    }
  };

  auto* slices = app.add_subcommand("slices", "write slice memberships and print slice sizes");
  add_common(slices, false);

  auto* train_cmd = app.add_subcommand("train", "train seeded runs and write checkpoints and logs");
  add_common(train_cmd, true);

  EvalOptions eval_opt;
  std::vector<std::string> eval_ckpts;
  std::optional<std::string> eval_baseline;
  std::string lift_mode = "points";
  auto* eval = app.add_subcommand("eval", "evaluate checkpoints overall and per slice");
  add_common(eval, true);
  eval->add_option("--checkpoint", eval_ckpts, "checkpoint files (default: every run under the output directory)");
  eval->add_option("--baseline-report", eval_baseline, "report JSONL to compute lifts against");
  eval->add_option("--lift-mode", lift_mode, "points|relative");
  eval->add_option("--split", eval_opt.split, "train|val|test");

  ReportOptions report_opt;
  std::vector<std::string> report_files;
  std::optional<std::string> report_baseline_file, report_out;
  auto* report = app.add_subcommand("report", "merge report files into one table");
  report->add_option("reports", report_files, "report JSONL files");
  report->add_option("--baseline", report_opt.baseline, "model name to compute lifts against");
  report->add_option("--baseline-report", report_baseline_file, "report JSONL whose first model is the baseline");
  report->add_option("--lift-mode", lift_mode, "points|relative");
  report->add_option("--out", report_out, "write the merged reports as JSONL");

  AttentionOptions att_opt;
  std::optional<std::string> att_ckpt;
  std::vector<std::string> att_ids;
  auto* attention = app.add_subcommand("attention", "dump per-sample membership and dot-product attention");
  add_common(attention, false);
  attention->add_option("--checkpoint", att_ckpt, "checkpoint file (default: run-0)");
  attention->add_option("--ids", att_ids, "sample ids, comma separated (default: the whole split)");
  attention->add_option("--split", att_opt.split, "train|val|test");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    if (e.get_exit_code() == 0) return kExitOk;
    return kExitConfig;
  }

  try {
    auto load = [&] {
      RunConfig cfg = load_run_config(config_path);
      if (output_dir) ov.output_dir = fs::path(*output_dir);
      apply_overrides(cfg, ov);
      return cfg;
    };
    if (*slices) return cmd_slices(load(), out);
    if (*train_cmd) return cmd_train(load(), out);
    if (*eval) {
      for (const auto& c : eval_ckpts) eval_opt.checkpoints.emplace_back(c);
      if (eval_baseline) eval_opt.baseline_report = fs::path(*eval_baseline);
      eval_opt.lift_mode = parse_lift_mode(lift_mode);
      return cmd_eval(load(), eval_opt, out);
    }
    if (*report) {
      for (const auto& r : report_files) report_opt.reports.emplace_back(r);
      if (report_baseline_file) report_opt.baseline_report = fs::path(*report_baseline_file);
      if (report_out) report_opt.out = fs::path(*report_out);
      report_opt.lift_mode = parse_lift_mode(lift_mode);
      return cmd_report(report_opt, out);
    }
    if (*attention) {
      if (att_ckpt) att_opt.checkpoint = fs::path(*att_ckpt);
      att_opt.ids = split_ids(att_ids);
      return cmd_attention(load(), att_opt, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const ParameterError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const IndexError& e) {
    err << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const ContractError& e) {
    err << "contract error: " << e.what() << '\n';
    return kExitContract;
  } catch (const DimensionError& e) {
    err << "contract error: " << e.what() << '\n';
    return kExitContract;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOther;
}

}  // namespace slicemoa::cli
