#include "snpkit/cli.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "snpkit/bundle.hpp"
#include "snpkit/cluster.hpp"
#include "snpkit/dataset.hpp"
#include "snpkit/heads.hpp"
#include "snpkit/model.hpp"
#include "snpkit/prune.hpp"
#include "snpkit/report.hpp"
#include "snpkit/snp.hpp"
#include "snpkit/snr.hpp"
#include "snpkit/train.hpp"

namespace snpkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------- util

std::vector<double> parse_range(const std::string& spec) {
  double lo, hi, step;
  char c1, c2;
  std::istringstream in(spec);
  if (!(in >> lo >> c1 >> hi >> c2 >> step) || c1 != ':' || c2 != ':' ||
      step <= 0.0)
    throw std::invalid_argument("bad range '" + spec + "', expected lo:hi:step");
  std::vector<double> out;
  for (double v = lo; v <= hi + 1e-9; v += step) out.push_back(v);
  return out;
}

std::vector<int> parse_int_list(const std::string& spec) {
  std::vector<int> out;
  std::istringstream in(spec);
  std::string tok;
  while (std::getline(in, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

json load_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return json::parse(in);
}

void save_json(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

json tap_to_json(const TapPoint& tap) {
  return {{"encoder", tap.encoder},
          {"site", to_string(tap.site)},
          {"include_skip", tap.include_skip}};
}

TapPoint tap_from_json(const json& j) {
  TapPoint t;
  t.encoder = j.at("encoder");
  t.site = tap_site_from_string(j.at("site"));
  t.include_skip = j.at("include_skip");
  return t;
}

// ------------------------------------------------------------- run directory

struct RunDir {
  fs::path root;

  fs::path model_dir() const { return root / "model"; }
  fs::path head_dir(const TapPoint& tap) const {
    return root / "heads" / tap.name();
  }
  fs::path snp_dir(const TapPoint& tap) const { return root / "snp" / tap.name(); }
  fs::path stats_dir() const { return root / "stats"; }
  fs::path prune_dir(const std::string& tag) const { return root / "prune" / tag; }
  fs::path analysis_dir(int encoder) const {
    return root / "head_analysis" / ("enc" + std::to_string(encoder));
  }
  fs::path report_dir() const { return root / "report"; }
};

void record_command(const RunDir& run, int argc, const char* const* argv) {
  const fs::path p = run.root / "run_config.json";
  json j = fs::exists(p) ? load_json(p) : json{{"version", kToolkitVersion}};
  j["version"] = kToolkitVersion;
  std::string cmd;
  for (int i = 0; i < argc; ++i) {
    if (i) cmd += ' ';
    cmd += argv[i];
  }
  j["commands"].push_back(cmd);
  save_json(p, j);
}

// --------------------------------------------------------------- run config

json parse_config_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  // structured JSON or plain key=value lines
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) continue;
    if (c == '{') return json::parse(text);
    break;
  }
  json j;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty()) continue;
    // numbers stay numbers, booleans stay booleans
    if (val == "true" || val == "false") {
      j[key] = (val == "true");
    } else {
      try {
        std::size_t used = 0;
        const double d = std::stod(val, &used);
        if (used == val.size())
          j[key] = d;
        else
          j[key] = val;
      } catch (...) {
        j[key] = val;
      }
    }
  }
  return j;
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  const std::string preset = j.value("preset", "");
  if (preset == "cct7_3x1")
    cfg = ModelConfig::cct7_3x1();
  else if (preset == "cct7_7x2")
    cfg = ModelConfig::cct7_7x2();
  else if (!preset.empty())
    throw std::runtime_error("unknown preset: " + preset);

  auto geti = [&](const char* k, int cur) { return j.contains(k) ? j.at(k).get<int>() : cur; };
  cfg.embed_dim = geti("embed_dim", cfg.embed_dim);
  cfg.num_heads = geti("num_heads", cfg.num_heads);
  cfg.ff_hidden = geti("ff_hidden", cfg.ff_hidden);
  cfg.num_encoders = geti("num_encoders", cfg.num_encoders);
  cfg.num_labels = geti("num_labels", cfg.num_labels);
  cfg.in_channels = geti("in_channels", cfg.in_channels);
  cfg.in_height = geti("in_height", cfg.in_height);
  cfg.in_width = geti("in_width", cfg.in_width);
  if (j.contains("positional_embedding"))
    cfg.positional_embedding = j.at("positional_embedding").get<bool>();
  if (j.contains("tokenizer_kernels")) {
    const json& tk = j.at("tokenizer_kernels");
    if (tk.is_string())
      cfg.tokenizer_kernels = parse_int_list(tk);
    else if (tk.is_number())
      cfg.tokenizer_kernels = {tk.get<int>()};
    else
      cfg.tokenizer_kernels = tk.get<std::vector<int>>();
  }
  return cfg;
}

Hyper hyper_from_json(const json& j) {
  Hyper h;
  auto getd = [&](const char* k, double cur) {
    return j.contains(k) ? j.at(k).get<double>() : cur;
  };
  h.lr = getd("lr", h.lr);
  h.l2 = getd("l2", h.l2);
  h.decay_q = getd("decay_q", h.decay_q);
  h.decay_interval = static_cast<int>(getd("decay_interval", h.decay_interval));
  h.label_smoothing = getd("label_smoothing", h.label_smoothing);
  h.momentum = getd("momentum", h.momentum);
  if (j.contains("nesterov")) h.nesterov = j.at("nesterov").get<bool>();
  h.batch_size = static_cast<int>(getd("batch_size", h.batch_size));
  h.epochs = static_cast<int>(getd("epochs", h.epochs));
  h.seed = static_cast<std::uint64_t>(getd("seed", static_cast<double>(h.seed)));
  return h;
}

Dataset load_dataset(const RunDir& run) {
  const json j = load_json(run.root / "dataset.json");
  const std::string type = j.at("type");
  if (type == "cifar100") return ingest_cifar100(j.at("path"));
  if (type == "synth")
    return synth_dataset(j.at("n_labels"), j.at("samples_per_label"),
                         j.at("channels"), j.at("height"), j.at("width"),
                         j.at("margin"), j.at("seed"));
  throw std::runtime_error("unknown dataset type: " + type);
}

ClassifierHead load_head(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json"))
    throw std::runtime_error("no trained head at " + dir.string() +
                             " (run probe-train first)");
  TensorBundle b = TensorBundle::load(dir.string());
  ClassifierHead h;
  const auto& shape = b.shape("fc_w");
  h.n_labels = static_cast<int>(shape[0]);
  h.width = static_cast<int>(shape[1]);
  h.pool = b.get_f64("pool");
  h.fc_w = Matrix(shape[0], shape[1]);
  auto w = b.get_f64("fc_w");
  std::copy(w.begin(), w.end(), h.fc_w.storage().begin());
  h.fc_b = b.get_f64("fc_b");
  return h;
}

void save_head(const fs::path& dir, const ClassifierHead& h, const TapPoint& tap,
               double accuracy) {
  TensorBundle b;
  b.put_f64("pool", {h.pool.size()}, h.pool.data());
  b.put_f64("fc_w", {static_cast<std::size_t>(h.n_labels),
                     static_cast<std::size_t>(h.width)},
            h.fc_w.data());
  b.put_f64("fc_b", {h.fc_b.size()}, h.fc_b.data());
  b.save(dir.string());
  save_json(dir / "meta.json", {{"tap", tap_to_json(tap)},
                                {"width", h.width},
                                {"n_labels", h.n_labels},
                                {"accuracy", accuracy}});
}

SnpSet load_snp(const fs::path& dir, double* threshold_out = nullptr) {
  if (!fs::exists(dir / "manifest.json"))
    throw std::runtime_error("no SNP extraction at " + dir.string() +
                             " (run snp extract first)");
  TensorBundle b = TensorBundle::load(dir.string());
  const json meta = load_json(dir / "meta.json");
  SnpSet set;
  set.tap = tap_from_json(meta.at("tap"));
  set.split = split_from_string(meta.at("split"));
  set.n_labels = meta.at("n_labels");
  set.width = meta.at("width");
  if (threshold_out) *threshold_out = meta.at("threshold");
  const auto fields = b.get_f64("fields");
  const std::size_t nl = set.n_labels;
  set.fields.assign(set.width, Matrix(nl, nl));
  for (int m = 0; m < set.width; ++m)
    std::copy_n(fields.begin() + static_cast<std::size_t>(m) * nl * nl, nl * nl,
                set.fields[m].storage().begin());
  return set;
}

std::string site_stats_path(const RunDir& run, const TapPoint& tap,
                            const char* suffix) {
  return (run.stats_dir() / (tap.name() + suffix)).string();
}

LayerStatsRow stats_row_from_json(const json& j) {
  LayerStatsRow r;
  r.tap = j.at("tap");
  r.accuracy = j.value("accuracy", -1.0);
  r.stats.n_c = j.at("N_c");
  r.stats.c_s = j.at("C_s");
  r.stats.diag = j.at("diag");
  r.stats.n = j.at("n");
  r.stats.n_m = j.at("N_M");
  r.stats.n_l = j.at("N_l");
  r.stats.threshold = j.at("Th");
  if (j.contains("SNR")) {
    r.has_snr = true;
    r.snr.signal = j.at("signal");
    r.snr.noise_i = j.at("noise_I");
    r.snr.noise_e = j.at("noise_E");
    r.snr.snr = j.at("SNR");
    r.snr.snr_min = j.value("SNR_min", -1.0);
    r.snr.threshold = r.stats.threshold;
  }
  return r;
}

json stats_row_to_json(const LayerStatsRow& r) {
  json j{{"tap", r.tap},      {"Th", r.stats.threshold}, {"N_c", r.stats.n_c},
         {"C_s", r.stats.c_s}, {"diag", r.stats.diag},    {"n", r.stats.n},
         {"N_M", r.stats.n_m}, {"N_l", r.stats.n_l}};
  if (r.accuracy >= 0) j["accuracy"] = r.accuracy;
  if (r.has_snr) {
    j["signal"] = r.snr.signal;
    j["noise_I"] = r.snr.noise_i;
    j["noise_E"] = r.snr.noise_e;
    j["SNR"] = r.snr.snr;
    if (r.snr.snr_min >= 0) j["SNR_min"] = r.snr.snr_min;
  }
  return j;
}

// ------------------------------------------------------------------ commands

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed, int argc,
              const char* const* argv) {
  const json cfg_json = parse_config_file(config_path);
  ModelConfig cfg = model_config_from_json(cfg_json);
  Hyper hyper = hyper_from_json(cfg_json);
  if (seed) hyper.seed = *seed;

  RunDir run{out_dir};
  fs::create_directories(run.root);

  // dataset spec recorded so later commands reload it deterministically
  json dj;
  const std::string ds_type = cfg_json.value("dataset", "synth");
  if (ds_type == "cifar100") {
    dj = {{"type", "cifar100"}, {"path", cfg_json.at("cifar_path").get<std::string>()}};
  } else if (ds_type == "synth") {
    dj = {{"type", "synth"},
          {"n_labels", cfg.num_labels},
          {"samples_per_label",
           static_cast<int>(cfg_json.value("synth_samples_per_label", 100.0))},
          {"channels", cfg.in_channels},
          {"height", cfg.in_height},
          {"width", cfg.in_width},
          {"margin", cfg_json.value("synth_margin", 2.0)},
          {"seed", static_cast<std::uint64_t>(cfg_json.value("synth_seed", 7.0))}};
  } else {
    throw std::runtime_error("unknown dataset type: " + ds_type);
  }
  save_json(run.root / "dataset.json", dj);

  // verbatim copy of the run configuration
  {
    json rc = fs::exists(run.root / "run_config.json")
                  ? load_json(run.root / "run_config.json")
                  : json{};
    rc["version"] = kToolkitVersion;
    rc["config"] = cfg_json;
    save_json(run.root / "run_config.json", rc);
  }
  record_command(run, argc, argv);

  const Dataset ds = load_dataset(run);
  Model model(cfg, hyper.seed);
  TrainReport report = train(model, ds, hyper);
  model.save(run.model_dir().string());

  CsvWriter csv({"epoch", "lr", "train_loss", "train_acc", "val_acc"});
  for (const auto& e : report.epochs)
    csv.add_row({std::to_string(e.epoch), fmt_double(e.lr),
                 fmt_double(e.train_loss), fmt_double(e.train_acc),
                 fmt_double(e.val_acc)});
  csv.save((run.root / "train_report.csv").string());
  std::cout << "final validation accuracy: " << fmt_double(report.final_val_acc)
            << "\n";
  return 0;
}

int cmd_probe_train(const RunDir& run, const TapPoint& tap, const json& hj) {
  const Model model = Model::load(run.model_dir().string());
  tap.validate(model.config());
  const Dataset ds = load_dataset(run);
  Hyper hyper = hyper_from_json(hj);
  auto [head, acc] = train_probe_head(model, tap, ds, hyper);
  save_head(run.head_dir(tap), head, tap, acc);
  std::cout << "probe head " << tap.name()
            << " validation accuracy: " << fmt_double(acc) << "\n";
  return 0;
}

int cmd_snp_extract(const RunDir& run, const TapPoint& tap, double threshold,
                    const std::string& split_name) {
  const Model model = Model::load(run.model_dir().string());
  tap.validate(model.config());
  const Dataset ds = load_dataset(run);
  const Split split = split_from_string(split_name);

  // block_out of the final encoder can use the model's own classifier
  ClassifierHead head;
  const fs::path head_path = run.head_dir(tap);
  if (fs::exists(head_path / "manifest.json")) {
    head = load_head(head_path);
  } else if (tap.site == TapSite::block_out &&
             tap.encoder == model.config().num_encoders) {
    head = model.classifier_head();
  } else {
    throw std::runtime_error("no trained head at " + head_path.string() +
                             " (run probe-train first)");
  }

  SnpSet set = extract_all(model, tap, head, ds, split);
  TensorBundle b;
  std::vector<double> flat;
  flat.reserve(static_cast<std::size_t>(set.width) * set.n_labels * set.n_labels);
  for (const auto& fm : set.fields)
    flat.insert(flat.end(), fm.storage().begin(), fm.storage().end());
  b.put_f64("fields",
            {static_cast<std::size_t>(set.width),
             static_cast<std::size_t>(set.n_labels),
             static_cast<std::size_t>(set.n_labels)},
            flat.data());
  b.save(run.snp_dir(tap).string());
  save_json(run.snp_dir(tap) / "meta.json",
            {{"tap", tap_to_json(tap)},
             {"split", to_string(split)},
             {"threshold", threshold},
             {"n_labels", set.n_labels},
             {"width", set.width}});
  std::cout << "extracted " << set.width << " SNP matrices at " << tap.name()
            << "\n";
  return 0;
}

// per-node CSV export for inspection
void export_snp_csv(const SnpSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  for (int m = 0; m < set.width; ++m) {
    std::ofstream out(dir / ("node" + std::to_string(m) + ".csv"));
    for (int i = 0; i < set.n_labels; ++i) {
      for (int j = 0; j < set.n_labels; ++j) {
        if (j) out << ',';
        out << fmt_double(set.fields[m](i, j));
      }
      out << '\n';
    }
  }
}

int cmd_snp_stats(const RunDir& run, const TapPoint& tap,
                  std::optional<double> threshold, const std::string& rule_name,
                  bool export_csv) {
  double stored_th = 0.3;
  const SnpSet set = load_snp(run.snp_dir(tap), &stored_th);
  const double th = threshold.value_or(stored_th);
  const ClusterRule rule = cluster_rule_from_string(rule_name);
  const LayerAnalysis la = analyze_layer(set, th, rule);

  LayerStatsRow row;
  row.tap = tap.name();
  const fs::path head_meta = run.head_dir(tap) / "meta.json";
  if (fs::exists(head_meta)) row.accuracy = load_json(head_meta).at("accuracy");
  row.stats = la.stats;

  fs::create_directories(run.stats_dir());
  write_layer_stats_csv(site_stats_path(run, tap, ".csv"), {row});
  write_histograms_csv(site_stats_path(run, tap, "_appearances.csv"),
                       site_stats_path(run, tap, "_field.csv"), la.histograms);
  json clusters = json::array();
  for (const auto& cs : la.clusters) {
    json cj = json::array();
    for (const auto& c : cs.clusters) cj.push_back(c);
    clusters.push_back({{"clusters", cj}, {"stray", cs.stray}});
  }
  save_json(run.stats_dir() / (tap.name() + "_clusters.json"),
            {{"rule", to_string(rule)}, {"Th", th}, {"matrices", clusters}});
  save_json(run.stats_dir() / (tap.name() + ".json"), stats_row_to_json(row));
  if (export_csv) export_snp_csv(set, run.root / "snp" / (tap.name() + "_csv"));

  const WidthDiag wd = width_diagnostic(la.stats.n_m, la.stats.diag, la.stats.n_l);
  std::cout << "N_c=" << fmt_double(la.stats.n_c, 4)
            << " C_s=" << fmt_double(la.stats.c_s, 4)
            << " diag=" << fmt_double(la.stats.diag, 4)
            << " n=" << fmt_double(la.stats.n, 4) << " N_M=" << la.stats.n_m
            << (wd == WidthDiag::warn ? "  [warn: N_M*diag < 10*N_l]" : "")
            << "\n";
  return 0;
}

int cmd_snr(const RunDir& run, const TapPoint& tap,
            const std::string& sweep_spec, const std::string& rule_name) {
  double stored_th = 0.3;
  const SnpSet set = load_snp(run.snp_dir(tap), &stored_th);
  const ClusterRule rule = cluster_rule_from_string(rule_name);
  fs::create_directories(run.stats_dir());

  if (!sweep_spec.empty()) {
    const auto thresholds = parse_range(sweep_spec);
    const SweepCurve curve = threshold_sweep(set, thresholds, rule);
    write_sweep_csv(site_stats_path(run, tap, "_sweep.csv"), curve);
    std::cout << curve.thresholds.size() << " sweep points written\n";
    return 0;
  }

  const LayerAnalysis la = analyze_layer(set, stored_th, rule);
  LayerStatsRow row;
  const fs::path sidecar = run.stats_dir() / (tap.name() + ".json");
  if (fs::exists(sidecar)) {
    row = stats_row_from_json(load_json(sidecar));
  } else {
    row.tap = tap.name();
    row.stats = la.stats;
  }
  row.has_snr = true;
  row.snr = snr(la.stats);
  row.snr.snr_min = snr_min(la.histograms.appearances, la.stats);
  write_layer_stats_csv(site_stats_path(run, tap, ".csv"), {row});
  save_json(sidecar, stats_row_to_json(row));
  std::cout << "signal=" << fmt_double(row.snr.signal, 4)
            << " noise_I=" << fmt_double(row.snr.noise_i, 4)
            << " noise_E=" << fmt_double(row.snr.noise_e, 4)
            << " SNR=" << fmt_double(row.snr.snr, 4) << "\n";
  return 0;
}

struct PruneArgs {
  std::string mode;  // andc | a-andc | random
  std::string layer = "classifier";
  int encoder = 0;  // 0 = last
  double th_in = -1.0, th_out = -1.0;
  double dilution = 0.9;
  int diag_size = 5;
  std::uint64_t seed = 0;
  // retraining
  double lr = 5e-4, background_lr = 0.0;
  int epochs = 5;
  int batch_size = 20;
  std::string rule = "mutual";
};

int cmd_prune(const RunDir& run, const PruneArgs& args) {
  Model model = Model::load(run.model_dir().string());
  const Dataset ds = load_dataset(run);
  const ModelConfig& cfg = model.config();
  const int enc = args.encoder > 0 ? args.encoder : cfg.num_encoders;
  const ClusterRule rule = cluster_rule_from_string(args.rule);

  PruneMask mask;
  std::string param_name;
  LayerStats in_stats{};
  bool have_stats = false;

  auto analyzed_diags = [&](const TapPoint& tap, double th, LayerStats* out) {
    const SnpSet set = load_snp(run.snp_dir(tap));
    const LayerAnalysis la = analyze_layer(set, th, rule);
    if (out) *out = la.stats;
    return diag_sets(la.clusters);
  };

  if (args.mode == "andc") {
    if (args.layer == "classifier") {
      const double th = args.th_in > 0 ? args.th_in : 0.3;
      TapPoint tap{cfg.num_encoders, TapSite::block_out, true};
      DiagSet diags = analyzed_diags(tap, th, &in_stats);
      have_stats = true;
      mask = classifier_mask(diags, cfg.num_labels);
      mask.th_in = th;
      param_name = "fc.W";
    } else if (args.layer == "qkv" || args.layer == "proj" ||
               args.layer == "lin2") {
      TapPoint tin{enc, TapSite::layernorm_out, true};
      TapPoint tout{enc, TapSite::qkv_out, true};
      double dth_in = 0.35, dth_out = 0.35;
      if (args.layer == "proj") {
        tin = {enc, TapSite::attention_out, true};
        tout = {enc, TapSite::projection_out, true};
        dth_in = dth_out = 0.3;
      } else if (args.layer == "lin2") {
        tin = {enc, TapSite::linear1_out, true};
        tout = {enc, TapSite::linear2_out, true};
      }
      const double th_in = args.th_in > 0 ? args.th_in : dth_in;
      const double th_out = args.th_out > 0 ? args.th_out : dth_out;
      DiagSet din = analyzed_diags(tin, th_in, &in_stats);
      have_stats = true;
      DiagSet dout = analyzed_diags(tout, th_out, nullptr);
      mask = interlayer_mask(din, dout);
      mask.th_in = th_in;
      mask.th_out = th_out;
      const char* suffix = args.layer == "qkv"   ? "qkv.W"
                           : args.layer == "proj" ? "proj.W"
                                                  : "lin2.W";
      param_name = "enc" + std::to_string(enc) + "." + suffix;
    } else {
      throw std::runtime_error("unknown prune layer: " + args.layer);
    }
  } else if (args.mode == "a-andc") {
    auto art = artificial_mask(cfg.embed_dim, cfg.num_labels, args.diag_size,
                               args.seed);
    if (art.warned)
      std::cerr << "warning: some labels unassigned (nodes*diag_size < N_l)\n";
    mask = std::move(art.mask);
    param_name = "fc.W";
  } else if (args.mode == "random") {
    mask = random_mask(cfg.num_labels, cfg.embed_dim, args.dilution, args.seed);
    param_name = "fc.W";
  } else {
    throw std::runtime_error("unknown prune mode: " + args.mode);
  }

  Hyper hyper;
  hyper.lr = args.lr;
  hyper.epochs = args.epochs;
  hyper.batch_size = args.batch_size;
  hyper.momentum = 0.9;
  hyper.seed = args.seed;
  const RetrainResult res =
      apply_and_retrain(model, ds, param_name, mask, hyper, args.background_lr);

  const std::string tag = args.mode + "_" + args.layer +
                          (args.layer == "classifier"
                               ? ""
                               : "_enc" + std::to_string(enc));
  const fs::path dir = run.prune_dir(tag);
  TensorBundle b;
  b.put_bool("keep", {mask.keep.rows(), mask.keep.cols()},
             mask.keep.storage().data());
  b.save(dir.string());
  save_json(dir / "provenance.json",
            {{"provenance", to_string(mask.provenance)},
             {"layer", param_name},
             {"th_in", mask.th_in},
             {"th_out", mask.th_out},
             {"seed", mask.seed},
             {"dilution", mask.dilution()},
             {"accuracy_before", res.accuracy_before},
             {"accuracy_after", res.accuracy_after}});

  CsvWriter csv({"layer", "Th", "Acc_before", "Acc_after", "N_c", "C_s", "diag",
                 "n", "dilution"});
  csv.add_row({param_name,
               mask.th_in > 0 ? fmt_double(mask.th_in) : "",
               fmt_double(res.accuracy_before), fmt_double(res.accuracy_after),
               have_stats ? fmt_double(in_stats.n_c) : "",
               have_stats ? fmt_double(in_stats.c_s) : "",
               have_stats ? fmt_double(in_stats.diag) : "",
               have_stats ? fmt_double(in_stats.n) : "",
               fmt_double(mask.dilution())});
  csv.save((dir / "result.csv").string());
  model.save((dir / "model").string());

  std::cout << "dilution=" << fmt_double(mask.dilution(), 4)
            << " acc_before=" << fmt_double(res.accuracy_before, 4)
            << " acc_after=" << fmt_double(res.accuracy_after, 4) << "\n";
  return 0;
}

int cmd_heads_analyze(const RunDir& run, int encoder, double th_ratio,
                      std::optional<double> threshold,
                      const std::string& ratios_spec) {
  const Model model = Model::load(run.model_dir().string());
  const ModelConfig& cfg = model.config();
  const int enc = encoder > 0 ? encoder : cfg.num_encoders;
  const TapPoint tap{enc, TapSite::attention_out, true};

  double stored_th = 0.3;
  const SnpSet set = load_snp(run.snp_dir(tap), &stored_th);
  const double th = threshold.value_or(stored_th);
  const LayerAnalysis la = analyze_layer(set, th);

  auto profiles = head_label_counts(la.clusters, set.n_labels, cfg.num_heads);
  assign_labels(profiles, th_ratio);

  const Dataset ds = load_dataset(run);
  const ClassifierHead head = load_head(run.head_dir(tap));
  const auto features = extract_features(model, tap, ds);
  Split eval_split = Split::test;
  if (ds.indices(eval_split).empty()) eval_split = Split::validation;
  const Matrix acc = per_head_accuracy(features, head, ds, cfg.num_heads,
                                       eval_split);

  const fs::path dir = run.analysis_dir(enc);
  fs::create_directories(dir);

  CsvWriter counts_csv([&] {
    std::vector<std::string> h{"label"};
    for (const auto& p : profiles) h.push_back("head" + std::to_string(p.head));
    return h;
  }());
  for (int l = 0; l < set.n_labels; ++l) {
    std::vector<std::string> row{std::to_string(l)};
    for (const auto& p : profiles) row.push_back(std::to_string(p.counts[l]));
    counts_csv.add_row(std::move(row));
  }
  counts_csv.save((dir / "counts.csv").string());

  json assignments;
  std::vector<int> all_assigned;
  for (const auto& p : profiles) {
    assignments["head" + std::to_string(p.head)] = p.assigned;
    all_assigned.insert(all_assigned.end(), p.assigned.begin(), p.assigned.end());
  }
  save_json(dir / "assignments.json",
            {{"th_ratio", th_ratio}, {"Th", th}, {"heads", assignments}});

  CsvWriter acc_csv([&] {
    std::vector<std::string> h{"label"};
    for (const auto& p : profiles) h.push_back("head" + std::to_string(p.head));
    return h;
  }());
  for (int l = 0; l < set.n_labels; ++l) {
    std::vector<std::string> row{std::to_string(l)};
    for (int h = 0; h < cfg.num_heads; ++h) row.push_back(fmt_double(acc(h, l)));
    acc_csv.add_row(std::move(row));
  }
  acc_csv.save((dir / "per_head_accuracy.csv").string());

  // occupancy of each head's assigned labels vs. the dataset super-classes
  if (!ds.superclasses.empty()) {
    std::vector<std::pair<std::string, std::vector<double>>> occ_rows;
    for (const auto& p : profiles)
      occ_rows.emplace_back(
          "head" + std::to_string(p.head) + " (" +
              std::to_string(p.assigned.size()) + ")",
          superclass_occupancy(p.assigned, ds.superclasses));
    write_occupancy_csv((dir / "occupancy.csv").string(), occ_rows,
                        ds.superclasses.labels_per_class);
  }

  // Th_Ratio sweep
  const auto ratios = parse_range(ratios_spec);
  const auto totals = th_ratio_sweep(profiles, ratios);
  CsvWriter sweep({"th_ratio", "assigned_labels"});
  for (std::size_t i = 0; i < ratios.size(); ++i)
    sweep.add_row({fmt_double(ratios[i]), std::to_string(totals[i])});
  sweep.save((dir / "thratio_sweep.csv").string());

  // accuracy split on the final model
  if (!all_assigned.empty() &&
      all_assigned.size() < static_cast<std::size_t>(set.n_labels)) {
    const auto final_acc = per_label_accuracy(model, ds, eval_split);
    const auto [sb, rest] = sb_accuracy_split(final_acc, all_assigned);
    save_json(dir / "sb_accuracy.json",
              {{"mean_sb", sb},
               {"mean_rest", rest},
               {"assigned", all_assigned.size()}});
    std::cout << "assigned=" << all_assigned.size() << " mean_SB="
              << fmt_double(sb, 4) << " mean_rest=" << fmt_double(rest, 4)
              << "\n";
  } else {
    std::cout << "assigned=" << all_assigned.size() << "\n";
  }
  return 0;
}

int cmd_heads_superclass(const std::string& run_dir, const std::string& out,
                         bool exact, int mc_samples, std::uint64_t seed,
                         const std::string& n_list) {
  SuperclassMap map = consecutive_superclasses(100);
  int total_labels = 100;
  if (!run_dir.empty()) {
    const Dataset ds = load_dataset(RunDir{run_dir});
    if (!ds.superclasses.empty()) {
      map = ds.superclasses;
      total_labels = ds.n_labels;
    }
  }
  std::vector<std::pair<std::string, std::vector<double>>> rows;
  for (int n : parse_int_list(n_list)) {
    if (exact)
      rows.emplace_back(std::to_string(n) + " exact",
                        occupancy_exact(n, map, total_labels));
    if (mc_samples > 0)
      rows.emplace_back(std::to_string(n) + " mc",
                        occupancy_mc(n, map, total_labels, mc_samples, seed));
  }
  if (rows.empty())
    throw std::runtime_error("nothing to compute: pass --exact and/or --mc-samples");

  std::vector<std::string> header{"row"};
  for (int k = 1; k <= map.labels_per_class; ++k)
    header.push_back(std::to_string(k) + "/" +
                     std::to_string(map.labels_per_class));
  CsvWriter csv(header);
  for (auto& [name, values] : rows) {
    std::vector<std::string> row{name};
    for (double v : values) row.push_back(fmt_double(v, 4));
    csv.add_row(std::move(row));
  }
  if (!out.empty())
    csv.save(out);
  else
    std::cout << csv.str();
  return 0;
}

int cmd_dump_attention(const RunDir& run, const std::string& ids,
                       int encoder) {
  const Model model = Model::load(run.model_dir().string());
  const Dataset ds = load_dataset(run);
  const int enc = encoder > 0 ? encoder : model.config().num_encoders;
  TensorBundle b;
  for (int id : parse_int_list(ids)) {
    if (id < 0 || static_cast<std::size_t>(id) >= ds.size())
      throw std::runtime_error("bad image id " + std::to_string(id));
    const auto maps = model.attention_maps(ds.images[id].data(), enc);
    for (std::size_t h = 0; h < maps.size(); ++h) {
      const std::string name =
          "img" + std::to_string(id) +
          (h + 1 < maps.size() ? ".head" + std::to_string(h + 1) : ".mean");
      b.put_f64(name, {maps[h].rows(), maps[h].cols()}, maps[h].data());
    }
  }
  b.save((run.root / "attention").string());
  std::cout << "attention maps written\n";
  return 0;
}

int cmd_report(const RunDir& run) {
  std::vector<std::string> missing;
  if (!fs::exists(run.model_dir() / "model.json")) missing.push_back("model (run train)");
  if (!fs::exists(run.stats_dir())) missing.push_back("stats (run snp stats)");
  if (!missing.empty()) {
    std::string msg = "missing prerequisites:";
    for (const auto& m : missing) msg += " " + m + ";";
    throw std::runtime_error(msg);
  }

  std::vector<LayerStatsRow> rows;
  json summary;
  summary["version"] = kToolkitVersion;
  std::vector<fs::path> sidecars;
  for (const auto& e : fs::directory_iterator(run.stats_dir()))
    if (e.path().extension() == ".json" &&
        e.path().filename().string().find("_clusters") == std::string::npos)
      sidecars.push_back(e.path());
  std::sort(sidecars.begin(), sidecars.end());
  for (const auto& p : sidecars) {
    const json j = load_json(p);
    rows.push_back(stats_row_from_json(j));
    summary["layers"].push_back(j);
  }
  if (rows.empty())
    throw std::runtime_error("missing prerequisites: stats (run snp stats)");

  fs::create_directories(run.report_dir());
  write_layer_stats_csv((run.report_dir() / "table1.csv").string(), rows);
  for (const auto& e : fs::directory_iterator(run.root / "prune"))
    if (fs::exists(e.path() / "provenance.json"))
      summary["prune"].push_back(load_json(e.path() / "provenance.json"));
  save_json(run.report_dir() / "summary.json", summary);
  std::cout << "report written to " << run.report_dir().string() << "\n";
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"single-nodal performance toolkit for compact convolutional "
               "transformers"};
  app.require_subcommand(1);

  // train
  std::string config_path, out_dir;
  std::optional<std::uint64_t> train_seed;
  auto* train_cmd = app.add_subcommand("train", "train a model from a config");
  train_cmd->add_option("--config", config_path, "config file (JSON or key=value)")
      ->required();
  train_cmd->add_option("--out", out_dir, "output run directory")->required();
  std::uint64_t seed_val = 0;
  bool seed_set = false;
  train_cmd->add_option_function<std::uint64_t>(
      "--seed", [&](std::uint64_t s) { train_seed = s; }, "override seed");
  (void)seed_val;
  (void)seed_set;

  // shared run/tap options
  std::string run_dir;
  int encoder = 0;
  std::string site = "block_out";
  bool no_skip = false;

  auto add_tap_opts = [&](CLI::App* cmd, bool required_encoder) {
    cmd->add_option("--run", run_dir, "run directory")->required();
    auto* e = cmd->add_option("--encoder", encoder, "encoder index (1-based)");
    if (required_encoder) e->required();
    cmd->add_option("--site", site, "tap site");
    cmd->add_flag("--no-skip", no_skip, "exclude the residual field at the tap");
  };

  // probe-train
  double pt_lr = 1e-3, pt_l2 = 0.0, pt_q = 0.78, pt_eps = 0.0;
  int pt_epochs = 30, pt_batch = 100, pt_dt = 10;
  std::uint64_t pt_seed = 0;
  auto* probe_cmd = app.add_subcommand("probe-train",
                                       "train a classifier head at a tap point");
  add_tap_opts(probe_cmd, true);
  probe_cmd->add_option("--lr", pt_lr, "learning rate");
  probe_cmd->add_option("--l2", pt_l2, "L2 coefficient");
  probe_cmd->add_option("--decay-q", pt_q, "LR decay factor");
  probe_cmd->add_option("--decay-interval", pt_dt, "LR decay interval (epochs)");
  probe_cmd->add_option("--label-smoothing", pt_eps, "label smoothing epsilon");
  probe_cmd->add_option("--epochs", pt_epochs, "epochs");
  probe_cmd->add_option("--batch-size", pt_batch, "mini-batch size");
  probe_cmd->add_option("--seed", pt_seed, "head init / shuffle seed");

  // snp extract|stats
  auto* snp_cmd = app.add_subcommand("snp", "SNP extraction and statistics");
  snp_cmd->require_subcommand(1);
  double threshold = 0.3;
  std::string split_name = "validation";
  auto* extract_cmd = snp_cmd->add_subcommand("extract", "extract SNP matrices");
  add_tap_opts(extract_cmd, true);
  extract_cmd->add_option("--threshold", threshold, "clipping threshold");
  extract_cmd->add_option("--split", split_name, "dataset split to present");

  std::string rule_name = "mutual";
  bool th_given = false, export_csv = false;
  double th_override = 0.3;
  auto* stats_cmd = snp_cmd->add_subcommand("stats", "cluster statistics");
  add_tap_opts(stats_cmd, true);
  stats_cmd->add_option_function<double>(
      "--threshold", [&](double v) { th_override = v; th_given = true; },
      "re-clip at this threshold");
  stats_cmd->add_option("--rule", rule_name, "cluster rule: mutual|or|mutual+density");
  stats_cmd->add_flag("--export-csv", export_csv, "one CSV per node matrix");

  // snr
  std::string sweep_spec;
  auto* snr_cmd = app.add_subcommand("snr", "signal-to-noise statistics");
  add_tap_opts(snr_cmd, true);
  snr_cmd->add_option("--sweep", sweep_spec, "threshold sweep lo:hi:step");
  snr_cmd->add_option("--rule", rule_name, "cluster rule");

  // prune
  PruneArgs pa;
  auto* prune_cmd = app.add_subcommand("prune", "pruning masks and retraining");
  prune_cmd->require_subcommand(1);
  auto add_prune_opts = [&](CLI::App* c) {
    c->add_option("--run", run_dir, "run directory")->required();
    c->add_option("--lr", pa.lr, "pruned-layer retraining LR");
    c->add_option("--background-lr", pa.background_lr,
                  "LR for the rest of the network (0 freezes)");
    c->add_option("--retrain-epochs", pa.epochs, "retraining epochs");
    c->add_option("--batch-size", pa.batch_size, "retraining batch size");
    c->add_option("--seed", pa.seed, "seed");
  };
  auto* andc_cmd = prune_cmd->add_subcommand("andc", "ANDC pruning");
  add_prune_opts(andc_cmd);
  andc_cmd->add_option("--layer", pa.layer, "classifier|qkv|proj|lin2");
  andc_cmd->add_option("--encoder", pa.encoder, "encoder for interlayer pruning");
  andc_cmd->add_option("--th-in", pa.th_in, "input-side threshold");
  andc_cmd->add_option("--th-out", pa.th_out, "output-side threshold");
  andc_cmd->add_option("--rule", pa.rule, "cluster rule");
  auto* aandc_cmd = prune_cmd->add_subcommand("a-andc", "artificial ANDC");
  add_prune_opts(aandc_cmd);
  aandc_cmd->add_option("--diag-size", pa.diag_size, "labels per node");
  auto* rand_cmd = prune_cmd->add_subcommand("random", "random pruning");
  add_prune_opts(rand_cmd);
  rand_cmd->add_option("--dilution", pa.dilution, "target dilution");

  // heads
  auto* heads_cmd = app.add_subcommand("heads", "multi-head attention analysis");
  heads_cmd->require_subcommand(1);
  double th_ratio = 2.0;
  std::string ratios_spec = "1.1:3.0:0.1";
  auto* analyze_cmd = heads_cmd->add_subcommand("analyze", "head specialization");
  analyze_cmd->add_option("--run", run_dir, "run directory")->required();
  analyze_cmd->add_option("--encoder", encoder, "encoder (default: last)");
  analyze_cmd->add_option("--th-ratio", th_ratio, "assignment ratio");
  analyze_cmd->add_option_function<double>(
      "--threshold", [&](double v) { th_override = v; th_given = true; },
      "re-clip at this threshold");
  analyze_cmd->add_option("--ratios", ratios_spec, "Th_Ratio sweep lo:hi:step");

  bool exact = false;
  int mc_samples = 0;
  std::uint64_t sc_seed = 0;
  std::string n_list = "5,10,15,20,25", sc_out, sc_run;
  auto* super_cmd = heads_cmd->add_subcommand("superclass",
                                              "super-class occupancy baselines");
  super_cmd->add_flag("--exact", exact, "exact hypergeometric expectation");
  super_cmd->add_option("--mc-samples", mc_samples, "Monte-Carlo sample count");
  super_cmd->add_option("--seed", sc_seed, "Monte-Carlo seed");
  super_cmd->add_option("--n", n_list, "comma list of drawn label counts");
  super_cmd->add_option("--out", sc_out, "output CSV (default: stdout)");
  super_cmd->add_option("--run", sc_run, "use this run's super-class map");

  // dump-attention
  std::string image_ids = "0";
  auto* dump_cmd = app.add_subcommand("dump-attention",
                                      "raw attention output field maps");
  dump_cmd->add_option("--run", run_dir, "run directory")->required();
  dump_cmd->add_option("--images", image_ids, "comma list of image ids");
  dump_cmd->add_option("--encoder", encoder, "encoder (default: last)");

  // report
  auto* report_cmd = app.add_subcommand("report", "collect report files");
  report_cmd->add_option("--run", run_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    TapPoint tap{encoder > 0 ? encoder : 1, tap_site_from_string(site), !no_skip};
    RunDir run{run_dir};
    if (!run_dir.empty() && app.get_subcommands()[0] != train_cmd &&
        fs::exists(run.root))
      record_command(run, argc, argv);

    if (train_cmd->parsed())
      return cmd_train(config_path, out_dir, train_seed, argc, argv);
    if (probe_cmd->parsed()) {
      json hj{{"lr", pt_lr},
              {"l2", pt_l2},
              {"decay_q", pt_q},
              {"decay_interval", pt_dt},
              {"label_smoothing", pt_eps},
              {"epochs", pt_epochs},
              {"batch_size", pt_batch},
              {"seed", static_cast<double>(pt_seed)}};
      return cmd_probe_train(run, tap, hj);
    }
    if (extract_cmd->parsed())
      return cmd_snp_extract(run, tap, threshold, split_name);
    if (stats_cmd->parsed())
      return cmd_snp_stats(run, tap,
                           th_given ? std::optional<double>(th_override)
                                    : std::nullopt,
                           rule_name, export_csv);
    if (snr_cmd->parsed()) return cmd_snr(run, tap, sweep_spec, rule_name);
    if (prune_cmd->parsed()) {
      pa.mode = prune_cmd->get_subcommands()[0]->get_name();
      return cmd_prune(run, pa);
    }
    if (analyze_cmd->parsed())
      return cmd_heads_analyze(run, encoder, th_ratio,
                               th_given ? std::optional<double>(th_override)
                                        : std::nullopt,
                               ratios_spec);
    if (super_cmd->parsed())
      return cmd_heads_superclass(sc_run, sc_out, exact, mc_samples, sc_seed,
                                  n_list);
    if (dump_cmd->parsed()) return cmd_dump_attention(run, image_ids, encoder);
    if (report_cmd->parsed()) return cmd_report(run);
    throw std::runtime_error("no subcommand dispatched");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace snpkit
