// mmrec: multimodal recommender pipeline (synthesize, split, train, evaluate,
// sweep, gap diagnostics, significance tests).

#include <chrono>
#include <iostream>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "mmrec/common.hpp"
#include "mmrec/gap.hpp"
#include "mmrec/kernels.hpp"
#include "mmrec/metrics.hpp"
#include "mmrec/synth.hpp"
#include "mmrec/trainer.hpp"

using namespace mmrec;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string iso_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  uint64_t seed = 0;
  json hashes = json::object();
  json inputs = json::object();
  std::string started;

  void write(const fs::path& dir) const {
    json j;
    j["command"] = command;
    j["argv"] = argv;
    j["seed"] = seed;
    j["threads"] = kernels::thread_count();
    j["versions"] = {{"mmrec", MMREC_VERSION}};
    j["inputs"] = inputs;
    j["hashes"] = hashes;
    j["timestamps"] = {{"started", started}, {"finished", iso_now()}};
    write_text_file(dir / "run.json", j.dump(2) + "\n");
  }
};

Dataset load_data_dir(const fs::path& dir) { return load_dataset(dir / "dataset.json"); }

json read_json_file(const fs::path& p) {
  try {
    return json::parse(read_text_file(p));
  } catch (const json::exception& e) {
    throw ValidationError("invalid JSON in " + p.string() + ": " + e.what());
  }
}

// Config files carry {"model": {...}, "train": {...}}; a bare model object is
// also accepted.
std::pair<ModelConfig, TrainConfig> parse_train_config(const fs::path& p) {
  json j = read_json_file(p);
  json jm = j.contains("model") ? j.at("model") : j;
  ModelConfig mc = ModelConfig::from_json(jm);
  TrainConfig tc = j.contains("train") ? TrainConfig::from_json(j.at("train")) : TrainConfig{};
  return {mc, tc};
}

std::vector<std::string> split_csv_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<double> parse_double_list(const std::string& s, const char* what) {
  std::vector<double> out;
  for (const auto& tok : split_csv_list(s)) {
    try {
      out.push_back(std::stod(tok));
    } catch (...) {
      throw ValidationError(std::string("cannot parse ") + what + " value '" + tok + "'");
    }
  }
  if (out.empty()) throw ValidationError(std::string(what) + " list is empty");
  return out;
}

std::vector<int> bank_entities(const Dataset& data, const Split& split, const ModelConfig& cfg,
                               const std::string& which) {
  bool user_bank = cfg.kind == "sibrar" && cfg.side == "user";
  size_t count = user_bank ? data.n_users : data.n_items;
  if (which == "all") {
    std::vector<int> all(count);
    for (size_t i = 0; i < count; ++i) all[i] = static_cast<int>(i);
    return all;
  }
  if (which != "test") throw ValidationError("--items must be 'test' or 'all'");
  std::set<int> picked;
  for (auto [u, i] : split.test) picked.insert(user_bank ? u : i);
  return std::vector<int>(picked.begin(), picked.end());
}

// Trains one model in memory and reports test NDCG plus intra-item gap
// metrics; a sweep cell.
struct CellOutcome {
  bool ok = false;
  std::string error;
  double ndcg = 0, intra_cs = 0, intra_ed = 0;
};

CellOutcome run_cell(const Dataset& data, const Split& split, const TrainView& tv, ModelConfig mc,
                     TrainConfig tc, int k, uint64_t cell_seed) {
  CellOutcome out;
  try {
    mc.init_seed = hash64(cell_seed, "init");
    tc.seed = cell_seed;
    auto model = make_model<float>(mc, data, tv);
    train(*model, data, split, tv, tc);
    out.ndcg = eval_model(*model, data, split, tv, "test", k, {}).mean.at("ndcg");
    std::vector<int> items;
    {
      std::set<int> picked;
      for (auto [u, i] : split.test) picked.insert(i);
      items.assign(picked.begin(), picked.end());
    }
    EmbeddingBank bank = build_bank(*model, items);
    out.intra_cs = intra_metric(bank, GapMetric::cosine);
    out.intra_ed = intra_metric(bank, GapMetric::euclidean);
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  return out;
}

int dispatch(int argc, char** argv) {
  CLI::App app{"multimodal single-/multi-branch recommender pipeline"};
  app.require_subcommand(1);

  std::string data_dir, split_dir, config_file, out_dir, run_dir;
  uint64_t seed = 0;
  int k = 10;
  int threads = 0;

  auto add_common = [&](CLI::App* cmd, bool needs_out = true) {
    if (needs_out) cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--seed", seed, "master random seed");
    cmd->add_option("--threads", threads, "OpenMP thread count (0 = library default)");
  };

  // synth
  auto* c_synth = app.add_subcommand("synth", "generate a planted-structure synthetic dataset");
  add_common(c_synth);
  c_synth->add_option("--config", config_file, "SynthConfig JSON (defaults when omitted)");

  // split
  std::string scenario = "warm", ratios_str = "0.8,0.1,0.1";
  auto* c_split = app.add_subcommand("split", "produce warm or cold train/val/test splits");
  add_common(c_split);
  c_split->add_option("--data", data_dir, "dataset directory")->required();
  c_split->add_option("--scenario", scenario, "warm | user-cold | item-cold");
  c_split->add_option("--ratios", ratios_str, "train,val,test ratios");

  // train
  auto* c_train = app.add_subcommand("train", "train a model with early stopping on val NDCG@k");
  add_common(c_train);
  c_train->add_option("--data", data_dir)->required();
  c_train->add_option("--split", split_dir)->required();
  c_train->add_option("--config", config_file, "model (+train) config JSON")->required();
  c_train->add_option("--k", k, "validation cutoff");

  // eval
  std::string part = "test", modalities_csv;
  auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(c_eval);
  c_eval->add_option("--data", data_dir)->required();
  c_eval->add_option("--split", split_dir)->required();
  c_eval->add_option("--run", run_dir, "training run directory (checkpoint)")->required();
  c_eval->add_option("--k", k);
  c_eval->add_option("--on", part, "test | val");
  c_eval->add_option("--modalities", modalities_csv, "comma list; default all trained");

  // eval-grid
  auto* c_grid = app.add_subcommand("eval-grid", "evaluate on every non-empty modality subset");
  add_common(c_grid);
  c_grid->add_option("--data", data_dir)->required();
  c_grid->add_option("--split", split_dir)->required();
  c_grid->add_option("--run", run_dir)->required();
  c_grid->add_option("--k", k);
  c_grid->add_option("--on", part, "test | val");
  c_grid->add_option("--modalities", modalities_csv, "comma list; default all trained");

  // sweep
  std::string alphas_csv, taus_csv;
  auto* c_sweep = app.add_subcommand("sweep", "(alpha, tau) grid: train each cell from scratch");
  add_common(c_sweep);
  c_sweep->add_option("--data", data_dir)->required();
  c_sweep->add_option("--split", split_dir)->required();
  c_sweep->add_option("--config", config_file)->required();
  c_sweep->add_option("--alphas", alphas_csv)->required();
  c_sweep->add_option("--taus", taus_csv)->required();
  c_sweep->add_option("--k", k);

  // gap
  std::string items_which = "test";
  auto* c_gap = app.add_subcommand("gap", "modality-gap metrics and PCA projection export");
  add_common(c_gap);
  c_gap->add_option("--data", data_dir)->required();
  c_gap->add_option("--split", split_dir)->required();
  c_gap->add_option("--run", run_dir)->required();
  c_gap->add_option("--items", items_which, "test | all");

  // probe
  int probe_seeds = 20;
  auto* c_probe = app.add_subcommand("probe", "modality-separability probe");
  add_common(c_probe);
  c_probe->add_option("--data", data_dir)->required();
  c_probe->add_option("--split", split_dir)->required();
  c_probe->add_option("--run", run_dir)->required();
  c_probe->add_option("--items", items_which, "test | all");
  c_probe->add_option("--probe-seeds", probe_seeds, "number of probe train/test splits");

  // compare
  std::string run_a, run_b, metric = "ndcg";
  int n_comparisons = 1;
  auto* c_compare = app.add_subcommand("compare", "paired t-test between two eval runs");
  c_compare->add_option("--a", run_a, "first eval directory")->required();
  c_compare->add_option("--b", run_b, "second eval directory")->required();
  c_compare->add_option("--metric", metric);
  c_compare->add_option("--n-comparisons", n_comparisons, "Bonferroni family size");
  c_compare->add_option("--out", out_dir, "optional output directory");

  // report
  auto* c_report = app.add_subcommand("report", "concatenate a run's CSV outputs into markdown");
  c_report->add_option("--run", run_dir, "run directory")->required();
  c_report->add_option("--out", out_dir, "output directory (default: the run directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  kernels::set_thread_count(threads);

  RunManifest manifest;
  manifest.started = iso_now();
  manifest.seed = seed;
  for (int i = 0; i < argc; ++i) manifest.argv.push_back(argv[i]);

  if (c_synth->parsed()) {
    manifest.command = "synth";
    SynthConfig cfg;
    if (!config_file.empty()) cfg = SynthConfig::from_json(read_json_file(config_file));
    if (c_synth->count("--seed")) cfg.seed = seed;
    manifest.seed = cfg.seed;
    generate(cfg, out_dir);
    manifest.hashes["dataset"] = std::to_string(hash_directory(out_dir));
    manifest.write(out_dir);
    std::cout << "synth: wrote dataset to " << out_dir << "\n";
    return 0;
  }

  if (c_split->parsed()) {
    manifest.command = "split";
    Dataset data = load_data_dir(data_dir);
    auto rl = parse_double_list(ratios_str, "--ratios");
    if (rl.size() != 3) throw ValidationError("--ratios needs three values");
    std::array<double, 3> ratios{rl[0], rl[1], rl[2]};
    Scenario sc = scenario_from_name(scenario);
    Split s = sc == Scenario::warm
                  ? split_warm(data, ratios, seed)
                  : split_cold(data, sc == Scenario::user_cold ? "user" : "item", ratios, seed);
    save_split(s, out_dir);
    manifest.hashes["dataset"] = std::to_string(hash_directory(data_dir));
    manifest.write(out_dir);
    std::cout << "split: " << scenario << " |train|=" << s.train.size() << " |val|=" << s.val.size()
              << " |test|=" << s.test.size() << "\n";
    return 0;
  }

  if (c_train->parsed()) {
    manifest.command = "train";
    manifest.inputs = {{"data", data_dir}, {"split", split_dir}, {"config", config_file}};
    Dataset data = load_data_dir(data_dir);
    Split split = load_split(split_dir);
    TrainView tv = TrainView::build(data, split);
    auto [mc, tc] = parse_train_config(config_file);
    mc.init_seed = hash64(seed, "init");
    tc.seed = seed;
    tc.eval_k = k;
    auto model = make_model<float>(mc, data, tv);
    TrainHistory history = train(*model, data, split, tv, tc);
    fs::create_directories(out_dir);
    json jc;
    jc["model"] = mc.to_json();
    jc["train"] = tc.to_json();
    write_text_file(fs::path(out_dir) / "config.json", jc.dump(2) + "\n");
    save_history(history, out_dir);
    save_checkpoint(*model, out_dir);
    manifest.hashes["dataset"] = std::to_string(hash_directory(data_dir));
    manifest.hashes["split"] = std::to_string(hash_directory(split_dir));
    manifest.hashes["config"] = std::to_string(hash_file(config_file));
    manifest.write(out_dir);
    std::cout << "train: " << history.epochs.size() << " epochs, best epoch " << history.best_epoch;
    if (!history.epochs.empty() && history.best_epoch >= 1)
      std::cout << " (val ndcg@" << k << " = "
                << fmt_double(history.epochs[static_cast<size_t>(history.best_epoch - 1)].val_ndcg) << ")";
    std::cout << "\n";
    return 0;
  }

  if (c_eval->parsed() || c_grid->parsed()) {
    bool grid_mode = c_grid->parsed();
    manifest.command = grid_mode ? "eval-grid" : "eval";
    manifest.inputs = {{"data", data_dir}, {"split", split_dir}, {"run", run_dir}};
    Dataset data = load_data_dir(data_dir);
    Split split = load_split(split_dir);
    TrainView tv = TrainView::build(data, split);
    auto model = load_checkpoint(run_dir, data, tv);
    std::vector<std::string> names = split_csv_list(modalities_csv);
    fs::create_directories(out_dir);
    if (grid_mode) {
      SubsetGridResult grid = subset_grid(*model, data, split, tv, part, k, names);
      write_grid(grid, out_dir);
      std::cout << "eval-grid: " << grid.rows.size() << " subsets\n";
    } else {
      std::vector<int> subset = resolve_subset(*model, names);
      MetricReport report = eval_model(*model, data, split, tv, part, k, subset);
      write_metric_report(report, out_dir);
      std::cout << "eval: ndcg@" << k << " = " << fmt_double(report.mean.at("ndcg")) << " over "
                << report.n_users_evaluated << " users\n";
    }
    manifest.hashes["dataset"] = std::to_string(hash_directory(data_dir));
    manifest.hashes["split"] = std::to_string(hash_directory(split_dir));
    manifest.write(out_dir);
    return 0;
  }

  if (c_sweep->parsed()) {
    manifest.command = "sweep";
    Dataset data = load_data_dir(data_dir);
    Split split = load_split(split_dir);
    TrainView tv = TrainView::build(data, split);
    auto [mc, tc] = parse_train_config(config_file);
    tc.eval_k = k;
    std::vector<double> alphas = parse_double_list(alphas_csv, "--alphas");
    std::vector<double> taus = parse_double_list(taus_csv, "--taus");
    fs::create_directories(out_dir);
    std::string csv = "alpha,tau,ratio,ndcg10,intra_cs,intra_ed,status\n";
    json rows = json::array();
    for (size_t ai = 0; ai < alphas.size(); ++ai)
      for (size_t ti = 0; ti < taus.size(); ++ti) {
        ModelConfig cell_cfg = mc;
        cell_cfg.loss.alpha = alphas[ai];
        cell_cfg.loss.tau = taus[ti];
        cell_cfg.variant = alphas[ai] > 0 ? "sc" : "s";
        uint64_t cell_seed =
            hash64(seed, "sweep.cell." + std::to_string(ai) + "." + std::to_string(ti));
        CellOutcome cell = run_cell(data, split, tv, cell_cfg, tc, k, cell_seed);
        double ratio = taus[ti] != 0 ? alphas[ai] / taus[ti] : 0;
        std::string status = cell.ok ? "ok" : cell.error;
        for (char& ch : status)
          if (ch == ',' || ch == '\n') ch = ';';
        csv += fmt_double(alphas[ai]) + "," + fmt_double(taus[ti]) + "," + fmt_double(ratio) + "," +
               (cell.ok ? fmt_double(cell.ndcg) : "") + "," + (cell.ok ? fmt_double(cell.intra_cs) : "") +
               "," + (cell.ok ? fmt_double(cell.intra_ed) : "") + "," + status + "\n";
        rows.push_back({{"alpha", alphas[ai]},
                        {"tau", taus[ti]},
                        {"ratio", ratio},
                        {"ndcg10", cell.ok ? json(cell.ndcg) : json()},
                        {"intra_cs", cell.ok ? json(cell.intra_cs) : json()},
                        {"intra_ed", cell.ok ? json(cell.intra_ed) : json()},
                        {"status", status}});
        std::cout << "sweep cell alpha=" << fmt_double(alphas[ai]) << " tau=" << fmt_double(taus[ti])
                  << (cell.ok ? " ndcg=" + fmt_double(cell.ndcg) : " FAILED") << "\n";
      }
    write_text_file(fs::path(out_dir) / "sweep.csv", csv);
    write_text_file(fs::path(out_dir) / "sweep.json", json{{"rows", rows}}.dump(2) + "\n");
    manifest.hashes["dataset"] = std::to_string(hash_directory(data_dir));
    manifest.hashes["split"] = std::to_string(hash_directory(split_dir));
    manifest.hashes["config"] = std::to_string(hash_file(config_file));
    manifest.write(out_dir);
    return 0;
  }

  if (c_gap->parsed() || c_probe->parsed()) {
    bool probe_mode = c_probe->parsed();
    manifest.command = probe_mode ? "probe" : "gap";
    manifest.inputs = {{"data", data_dir}, {"split", split_dir}, {"run", run_dir}};
    Dataset data = load_data_dir(data_dir);
    Split split = load_split(split_dir);
    TrainView tv = TrainView::build(data, split);
    auto model = load_checkpoint(run_dir, data, tv);
    std::vector<int> entities = bank_entities(data, split, model->config(), items_which);
    EmbeddingBank bank = build_bank(*model, entities);
    fs::create_directories(out_dir);
    if (probe_mode) {
      ProbeResult probe = separability_probe(bank, 0.8, probe_seeds, seed);
      write_probe_csv(probe, out_dir);
      json j{{"per_seed_accuracy", probe.per_seed_accuracy},
             {"mean_accuracy", probe.mean_accuracy},
             {"random_baseline", probe.random_baseline},
             {"n_items", bank.items.size()}};
      write_text_file(fs::path(out_dir) / "probe.json", j.dump(2) + "\n");
      std::cout << "probe: mean accuracy " << fmt_double(probe.mean_accuracy) << " (random "
                << fmt_double(probe.random_baseline) << ")\n";
    } else {
      write_gap_csv(bank, out_dir);
      size_t ncomp = std::min<size_t>(10, bank.embs[0].cols());
      PcaResult pca = pca_project(bank, std::max<size_t>(ncomp, 2));
      write_projection_csv(bank, pca, out_dir, 500, seed);
      json j{{"explained_variance_ratio", pca.explained_ratio},
             {"n_items", bank.items.size()},
             {"modalities", bank.modalities}};
      write_text_file(fs::path(out_dir) / "gap.json", j.dump(2) + "\n");
      std::cout << "gap: intra_cs " << fmt_double(intra_metric(bank, GapMetric::cosine)) << ", inter_cs "
                << fmt_double(inter_metric(bank, GapMetric::cosine)) << "\n";
    }
    manifest.hashes["dataset"] = std::to_string(hash_directory(data_dir));
    manifest.hashes["split"] = std::to_string(hash_directory(split_dir));
    manifest.write(out_dir);
    return 0;
  }

  if (c_compare->parsed()) {
    manifest.command = "compare";
    MetricReport a = load_metric_report(run_a);
    MetricReport b = load_metric_report(run_b);
    if (a.users != b.users) throw ValidationError("compare: the two runs evaluated different user sets");
    if (!a.per_user.count(metric)) throw ValidationError("unknown metric '" + metric + "'");
    std::vector<double> va, vb;
    for (size_t i = 0; i < a.users.size(); ++i) {
      double x = a.per_user.at(metric)[i], y = b.per_user.at(metric)[i];
      if (std::isnan(x) || std::isnan(y)) continue;  // users excluded for this metric
      va.push_back(x);
      vb.push_back(y);
    }
    TTestResult t = paired_ttest(va, vb, n_comparisons);
    json j{{"metric", metric},         {"n_users", va.size()},
           {"t", t.t},                 {"p", t.p},
           {"threshold", t.threshold}, {"significant", t.significant},
           {"zero_variance", t.zero_variance}};
    std::cout << j.dump(2) << "\n";
    if (!out_dir.empty()) {
      fs::create_directories(out_dir);
      write_text_file(fs::path(out_dir) / "compare.json", j.dump(2) + "\n");
      manifest.write(out_dir);
    }
    return 0;
  }

  if (c_report->parsed()) {
    manifest.command = "report";
    fs::path run(run_dir);
    std::vector<fs::path> csvs;
    for (const auto& e : fs::directory_iterator(run))
      if (e.is_regular_file() && e.path().extension() == ".csv") csvs.push_back(e.path());
    std::sort(csvs.begin(), csvs.end());
    if (csvs.empty()) throw ValidationError("no CSV outputs found in " + run_dir);
    std::string md = "# Run report: " + run.filename().string() + "\n";
    for (const auto& p : csvs) {
      md += "\n## " + p.filename().string() + "\n\n```csv\n" + read_text_file(p) + "```\n";
    }
    fs::path target = out_dir.empty() ? run : fs::path(out_dir);
    fs::create_directories(target);
    write_text_file(target / "report.md", md);
    std::cout << "report: " << (target / "report.md").string() << "\n";
    return 0;
  }

  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 2;
  }
}
