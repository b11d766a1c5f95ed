#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "deari/baselines.hpp"
#include "deari/csv.hpp"
#include "deari/model.hpp"
#include "deari/synth.hpp"
#include "deari/train.hpp"

using namespace deari;
using nlohmann::json;

namespace {

// exit codes: 0 success, 1 usage, 2 data, 3 numerical failure
constexpr int kUsageError = 1;
constexpr int kDataError = 2;
constexpr int kNumericalError = 3;

json metrics_json(const MetricsEntry& m) {
  return json{{"mae", m.mae},
              {"mre", m.mre},
              {"mae_normalized", m.mae_norm},
              {"mre_normalized", m.mre_norm},
              {"cells", m.cells}};
}

json report_json(const TrainReport& report, const RunConfig& config) {
  json curve = json::array();
  for (const EpochStat& s : report.curve) {
    curve.push_back({{"epoch", s.epoch},
                     {"train_loss", s.train_loss},
                     {"val_mae", s.val_mae},
                     {"improved", s.improved}});
  }
  json j;
  j["config"] = config_to_map(config);
  j["metrics"] = metrics_json(report.test);
  j["curve"] = std::move(curve);
  j["best_epoch"] = report.best_epoch;
  j["best_val_mae"] = report.best_val_mae;
  j["steps"] = report.steps;
  j["param_scalars"] = report.param_scalars;
  j["wall_seconds"] = report.wall_seconds;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write: " + path);
  out << text;
}

json counts_json(const ParameterCounts& counts, const StackConfig& sc) {
  json j;
  j["layers"] = sc.layers;
  j["backbone_per_direction"] = counts.backbone_per_direction;
  j["encoder_block"] = counts.encoder_block;
  j["attention_block_per_direction"] = counts.attention_per_direction;
  j["per_layer_delta"] = counts.per_layer_delta;
  j["total"] = counts.total;
  j["composition"] = std::to_string(sc.layers) + " x 2 backbones + " +
                     std::to_string(sc.layers - 1) + " x 2 attention blocks (" +
                     std::to_string(sc.encoder_depth) + " encoders each)";
  return j;
}

Array load_prediction(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read prediction: " + path);
  json j = json::parse(in);
  const int64_t b = j.at("b"), t = j.at("t"), d = j.at("d");
  return Array({b, t, d}, j.at("imputation").get<std::vector<real>>());
}

void save_prediction(const std::string& path, const Array& imputed) {
  json j;
  j["format_version"] = 1;
  j["b"] = imputed.dim(0);
  j["t"] = imputed.dim(1);
  j["d"] = imputed.dim(2);
  j["imputation"] = imputed.buffer();
  write_text(path, j.dump());
}

SynthSpec parse_synth_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read synth spec: " + path);
  SynthSpec spec;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("synth spec line " + std::to_string(lineno) +
                                  ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "samples") spec.samples = std::stoll(value);
    else if (key == "steps") spec.steps = std::stoll(value);
    else if (key == "features") spec.features = std::stoll(value);
    else if (key == "latents") spec.latents = std::stoll(value);
    else if (key == "noise") spec.noise = static_cast<real>(std::stod(value));
    else if (key == "ar_coeff") spec.ar_coeff = static_cast<real>(std::stod(value));
    else if (key == "missing") spec.missing = static_cast<real>(std::stod(value));
    else if (key == "gap_jitter") spec.gap_jitter = static_cast<real>(std::stod(value));
    else throw std::invalid_argument("unknown synth spec key: '" + key + "'");
  }
  return spec;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"deep attention recurrent imputation for multivariate time series"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "ingest a CSV, normalize, and hold out cells");
  std::string prep_input, prep_schema = "wide", prep_out;
  int64_t prep_window = 24;
  double prep_fraction = 0.1;
  uint64_t prep_seed = 1;
  bool prep_no_normalize = false;
  prepare->add_option("--input", prep_input, "CSV path")->required();
  prepare->add_option("--schema", prep_schema, "long|wide (default wide)");
  prepare->add_option("--window", prep_window, "steps per sample (default 24)");
  prepare->add_option("--mask-fraction", prep_fraction, "held-out fraction (default 0.1)");
  prepare->add_option("--seed", prep_seed, "masking seed");
  prepare->add_option("--out", prep_out, "output archive path")->required();
  prepare->add_flag("--no-normalize", prep_no_normalize, "skip normalization");

  // train
  auto* train_cmd = app.add_subcommand("train", "train a model on a prepared archive");
  std::string train_config, train_data, train_out, train_report;
  int64_t train_cv = 0;
  train_cmd->add_option("--config", train_config, "run configuration file")->required();
  train_cmd->add_option("--data", train_data, "prepared archive")->required();
  train_cmd->add_option("--out", train_out, "checkpoint output path")->required();
  train_cmd->add_option("--report", train_report, "metrics JSON path (default <out>.metrics.json)");
  train_cmd->add_option("--cv", train_cv, "run k-fold cross-validation instead of one split");

  // impute
  auto* impute_cmd = app.add_subcommand("impute", "impute an archive with a trained checkpoint");
  std::string imp_checkpoint, imp_data, imp_out;
  impute_cmd->add_option("--checkpoint", imp_checkpoint)->required();
  impute_cmd->add_option("--data", imp_data)->required();
  impute_cmd->add_option("--out", imp_out, "prediction JSON path")->required();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "score predictions against held-out cells");
  std::string eval_pred, eval_truth, eval_out;
  eval_cmd->add_option("--pred", eval_pred, "prediction JSON from impute")->required();
  eval_cmd->add_option("--truth", eval_truth, "prepared archive with eval mask")->required();
  eval_cmd->add_option("--out", eval_out, "metrics JSON path (default stdout)");

  // uncertainty
  auto* unc_cmd = app.add_subcommand("uncertainty", "Monte-Carlo bands from a Bayesian checkpoint");
  std::string unc_checkpoint, unc_data, unc_out;
  int64_t unc_sims = 10;
  uint64_t unc_seed = 1;
  unc_cmd->add_option("--checkpoint", unc_checkpoint)->required();
  unc_cmd->add_option("--data", unc_data)->required();
  unc_cmd->add_option("--n-sim", unc_sims, "simulations (default 10)");
  unc_cmd->add_option("--seed", unc_seed, "simulation seed");
  unc_cmd->add_option("--out", unc_out, "flat band table (CSV)")->required();

  // params
  auto* params_cmd = app.add_subcommand("params", "parameter-count report for a configuration");
  std::string params_config;
  int64_t params_features = 35;
  params_cmd->add_option("--config", params_config)->required();
  params_cmd->add_option("--features", params_features, "feature count D (default 35)");

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "train one model per depth and compare");
  std::string sweep_config, sweep_data, sweep_layers = "1,2,3", sweep_out;
  sweep_cmd->add_option("--config", sweep_config)->required();
  sweep_cmd->add_option("--data", sweep_data)->required();
  sweep_cmd->add_option("--layers", sweep_layers, "comma-separated depths (default 1,2,3)");
  sweep_cmd->add_option("--out", sweep_out, "sweep table (CSV) path");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic archive");
  std::string synth_spec_path, synth_out;
  uint64_t synth_seed = 1;
  double synth_fraction = 0.0;
  bool synth_no_normalize = false;
  synth_cmd->add_option("--spec", synth_spec_path, "synth spec file (key = value)");
  synth_cmd->add_option("--seed", synth_seed);
  synth_cmd->add_option("--mask-fraction", synth_fraction, "also hold out this fraction");
  synth_cmd->add_flag("--no-normalize", synth_no_normalize);
  synth_cmd->add_option("--out", synth_out, "output archive path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsageError;  // help/version exit cleanly
  }

  if (prepare->parsed()) {
    IngestSpec spec;
    spec.format = prep_schema == "long" ? CsvFormat::long_form : CsvFormat::wide;
    if (prep_schema != "long" && prep_schema != "wide") {
      throw std::invalid_argument("schema must be long or wide");
    }
    spec.window = prep_window;
    SeriesBatch batch = ingest_csv(prep_input, spec);
    if (!prep_no_normalize) apply_normalize(batch, fit_normalize(batch));
    if (prep_fraction > 0) apply_eval_mask(batch, static_cast<real>(prep_fraction), prep_seed);
    save_archive(batch, prep_out);
    std::cout << "prepared " << batch.samples() << " samples x " << batch.steps() << " steps x "
              << batch.features() << " features; " << batch.eval_count()
              << " held-out cells -> " << prep_out << "\n";
    return 0;
  }

  if (train_cmd->parsed()) {
    RunConfig config = load_config(train_config);
    SeriesBatch data = load_archive(train_data);
    if (train_report.empty()) train_report = train_out + ".metrics.json";
    if (train_cv > 0) {
      CrossValidationReport cv = cross_validate(config, data, train_cv);
      json folds = json::array();
      for (size_t i = 0; i < cv.folds.size(); ++i) {
        json fold = report_json(cv.folds[i], config);
        fold["fold"] = i;
        folds.push_back(std::move(fold));
      }
      json j;
      j["config"] = config_to_map(config);
      j["folds"] = std::move(folds);
      j["mae_mean"] = cv.mae_mean;
      j["mae_std"] = cv.mae_std;
      j["mre_mean"] = cv.mre_mean;
      j["mre_std"] = cv.mre_std;
      write_text(train_report, j.dump(2));
      std::cout << "cv mae " << cv.mae_mean << " +- " << cv.mae_std << " over " << train_cv
                << " folds -> " << train_report << "\n";
      return 0;
    }
    Model model(config, data.features());
    TrainReport report = run_training(model, data);
    model.save(train_out);
    write_text(train_report, report_json(report, config).dump(2));
    std::cout << "test mae " << report.test.mae << " mre " << report.test.mre << " (best epoch "
              << report.best_epoch << ") -> " << train_out << "\n";
    return 0;
  }

  if (impute_cmd->parsed()) {
    Model model = Model::load(imp_checkpoint);
    SeriesBatch data = load_archive(imp_data);
    save_prediction(imp_out, model.impute(data));
    std::cout << "imputed " << data.samples() << " samples -> " << imp_out << "\n";
    return 0;
  }

  if (eval_cmd->parsed()) {
    SeriesBatch truth = load_archive(eval_truth);
    MetricsEntry m = evaluate(load_prediction(eval_pred), truth);
    const std::string text = metrics_json(m).dump(2);
    if (eval_out.empty()) std::cout << text << "\n";
    else write_text(eval_out, text + "\n");
    return 0;
  }

  if (unc_cmd->parsed()) {
    Model model = Model::load(unc_checkpoint);
    SeriesBatch data = load_archive(unc_data);
    UncertaintyBand band = model.predict_with_uncertainty(data, unc_sims, unc_seed);
    std::ofstream out(unc_out);
    if (!out) throw std::runtime_error("cannot write: " + unc_out);
    out << "sample,t,d,mean,std,q05,q95,observed\n";
    out.precision(17);
    for (int64_t b = 0; b < data.samples(); ++b) {
      for (int64_t t = 0; t < data.steps(); ++t) {
        for (int64_t d = 0; d < data.features(); ++d) {
          out << b << "," << t << "," << d << "," << band.mean.at(b, t, d) << ","
              << band.stdev.at(b, t, d) << "," << band.q05.at(b, t, d) << ","
              << band.q95.at(b, t, d) << "," << (data.mask.at(b, t, d) != 0 ? 1 : 0) << "\n";
        }
      }
    }
    std::cout << "wrote " << data.values.numel() << " band records -> " << unc_out << "\n";
    return 0;
  }

  if (params_cmd->parsed()) {
    RunConfig config = load_config(params_config);
    Model probe(config, params_features);
    StackConfig sc = probe.stack_config();
    ParameterCounts counts = parameter_count(sc);
    json j = counts_json(counts, sc);
    j["model_total_with_extras"] = probe.params().scalar_count();
    std::cout << j.dump(2) << "\n";
    return 0;
  }

  if (sweep_cmd->parsed()) {
    RunConfig config = load_config(sweep_config);
    SeriesBatch data = load_archive(sweep_data);
    std::vector<int64_t> layer_list;
    std::stringstream ss(sweep_layers);
    std::string item;
    while (std::getline(ss, item, ',')) layer_list.push_back(std::stoll(item));
    if (layer_list.empty()) throw std::invalid_argument("empty layer list");
    std::vector<SweepRow> rows = depth_sweep(config, data, layer_list);
    std::ostringstream table;
    table << "layers,mae,mre,param_scalars,wall_seconds\n";
    table.precision(17);
    for (const SweepRow& row : rows) {
      table << row.layers << "," << row.mae << "," << row.mre << "," << row.param_scalars << ","
            << row.wall_seconds << "\n";
    }
    if (sweep_out.empty()) std::cout << table.str();
    else {
      write_text(sweep_out, table.str());
      std::cout << "wrote sweep table -> " << sweep_out << "\n";
    }
    return 0;
  }

  if (synth_cmd->parsed()) {
    SynthSpec spec;
    if (!synth_spec_path.empty()) spec = parse_synth_spec(synth_spec_path);
    SeriesBatch batch = synth_generate(spec, synth_seed);
    if (!synth_no_normalize) apply_normalize(batch, fit_normalize(batch));
    if (synth_fraction > 0) apply_eval_mask(batch, static_cast<real>(synth_fraction), synth_seed);
    save_archive(batch, synth_out);
    std::cout << "generated " << batch.samples() << " samples x " << batch.steps() << " steps x "
              << batch.features() << " features -> " << synth_out << "\n";
    return 0;
  }
  return kUsageError;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const std::runtime_error& e) {
    const std::string what = e.what();
    std::cerr << "error: " << what << "\n";
    return what.find("diverged") != std::string::npos || what.find("non-finite") != std::string::npos
               ? kNumericalError
               : kDataError;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsageError;
  }
}
