#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <map>

#include <json.hpp>

#include "mmrec/common.hpp"
#include "mmrec/metrics.hpp"
#include "test_util.hpp"

using namespace mmrec;
using mmrec::test::TempDir;
namespace fs = std::filesystem;

namespace {

std::string bin() {
  const char* b = std::getenv("MMREC_BIN");
  REQUIRE_MESSAGE(b != nullptr, "MMREC_BIN must point at the mmrec binary");
  return b;
}

int run(const std::string& args) {
  std::string cmd = bin() + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

// Hash of every CSV file under dir (sorted relative paths); params.bin included.
std::map<std::string, uint64_t> artifact_hashes(const fs::path& dir) {
  std::map<std::string, uint64_t> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::string ext = e.path().extension().string();
    if (ext == ".csv" || e.path().filename() == "params.bin")
      out[fs::relative(e.path(), dir).generic_string()] = hash_file(e.path());
  }
  return out;
}

// Small synthetic config so CLI pipelines stay fast.
void write_small_synth(const fs::path& p) {
  write_text_file(p, R"({"n_users": 50, "n_items": 60, "latent_dim": 4, "density": 0.12, "seed": 5,
    "modalities": [{"name": "m0", "entity": "item", "dim": 6, "noise_sigma": 0.2},
                   {"name": "m1", "entity": "item", "dim": 8, "noise_sigma": 0.2}]})");
}

void write_model_cfg(const fs::path& p, double alpha = 0.5, int max_epochs = 3) {
  nlohmann::json j;
  j["model"] = {{"kind", "sibrar"},
                {"variant", alpha > 0 ? "sc" : "s"},
                {"side", "item"},
                {"shared_dim", 6},
                {"g_layers", {8}},
                {"embedding_dim", 6},
                {"batchnorm", true},
                {"loss", {{"alpha", alpha}, {"tau", 5.0}, {"n_neg", 4}}}};
  j["train"] = {{"max_epochs", max_epochs}, {"patience", 5}, {"lr", 0.005}, {"batch_size", 32}};
  write_text_file(p, j.dump(2));
}

}  // namespace

TEST_CASE("cli: full pipeline reruns are byte-identical (timestamps excluded)") {
  TempDir root("cli-det");
  write_small_synth(root.path / "synth.json");
  write_model_cfg(root.path / "model.json");
  for (int rep = 1; rep <= 2; ++rep) {
    fs::path base = root.path / ("rep" + std::to_string(rep));
    std::string b = base.string();
    REQUIRE(run("synth --out " + b + "/data --config " + (root.path / "synth.json").string()) == 0);
    REQUIRE(run("split --data " + b + "/data --out " + b + "/split --seed 11") == 0);
    REQUIRE(run("train --data " + b + "/data --split " + b + "/split --config " +
                (root.path / "model.json").string() + " --out " + b + "/run --seed 3") == 0);
    REQUIRE(run("eval --data " + b + "/data --split " + b + "/split --run " + b + "/run --out " + b +
                "/eval --k 10") == 0);
    REQUIRE(run("eval-grid --data " + b + "/data --split " + b + "/split --run " + b + "/run --out " +
                b + "/grid --k 10") == 0);
    REQUIRE(run("gap --data " + b + "/data --split " + b + "/split --run " + b + "/run --out " + b +
                "/gap --seed 2") == 0);
    REQUIRE(run("probe --data " + b + "/data --split " + b + "/split --run " + b + "/run --out " + b +
                "/probe --seed 2 --probe-seeds 5") == 0);
  }
  auto h1 = artifact_hashes(root.path / "rep1");
  auto h2 = artifact_hashes(root.path / "rep2");
  CHECK(!h1.empty());
  CHECK(h1 == h2);
}

TEST_CASE("cli: synth determinism across separate invocations of the same seed") {
  TempDir root("cli-synth");
  write_small_synth(root.path / "synth.json");
  REQUIRE(run("synth --out " + (root.path / "a").string() + " --config " +
              (root.path / "synth.json").string()) == 0);
  REQUIRE(run("synth --out " + (root.path / "b").string() + " --config " +
              (root.path / "synth.json").string()) == 0);
  // run.json carries timestamps; compare dataset payload files only
  for (const char* f : {"users.tsv", "items.tsv", "interactions.tsv", "dataset.json", "truth.json"})
    CHECK(hash_file(root.path / "a" / f) == hash_file(root.path / "b" / f));
}

TEST_CASE("cli: eval writes the ten metric rows and the run.json manifest") {
  TempDir root("cli-eval");
  write_small_synth(root.path / "synth.json");
  write_model_cfg(root.path / "model.json");
  std::string b = root.path.string();
  REQUIRE(run("synth --out " + b + "/data --config " + b + "/synth.json") == 0);
  REQUIRE(run("split --data " + b + "/data --out " + b + "/split --seed 1") == 0);
  REQUIRE(run("train --data " + b + "/data --split " + b + "/split --config " + b +
              "/model.json --out " + b + "/run --seed 2") == 0);
  REQUIRE(run("eval --data " + b + "/data --split " + b + "/split --run " + b + "/run --out " + b +
              "/eval") == 0);
  std::string csv = read_text_file(root.path / "eval" / "metrics.csv");
  std::vector<std::string> expected{"ndcg", "recall", "precision", "f1",   "ap",
                                    "rr",   "coverage", "arp",      "aplt", "pl"};
  size_t rows = 0;
  for (const auto& name : expected) {
    CHECK(csv.find("\n" + name + ",") != std::string::npos);
    ++rows;
  }
  CHECK(rows == 10);
  CHECK(fs::exists(root.path / "eval" / "run.json"));
  auto manifest = nlohmann::json::parse(read_text_file(root.path / "eval" / "run.json"));
  CHECK(manifest.at("command") == "eval");
  CHECK(manifest.contains("threads"));
}

TEST_CASE("cli: sweep emits one row per (alpha, tau) cell with the ratio column") {
  TempDir root("cli-sweep");
  write_small_synth(root.path / "synth.json");
  write_model_cfg(root.path / "model.json", 0.5, 2);
  std::string b = root.path.string();
  REQUIRE(run("synth --out " + b + "/data --config " + b + "/synth.json") == 0);
  REQUIRE(run("split --data " + b + "/data --out " + b + "/split --seed 1") == 0);
  REQUIRE(run("sweep --data " + b + "/data --split " + b + "/split --config " + b +
              "/model.json --out " + b + "/sweep --seed 4 --alphas 0,0.01,0.1 --taus 0.01,0.1,1") == 0);
  std::string csv = read_text_file(root.path / "sweep" / "sweep.csv");
  size_t lines = static_cast<size_t>(std::count(csv.begin(), csv.end(), '\n'));
  CHECK(lines == 10);  // header + 9 cells
  CHECK(csv.rfind("alpha,tau,ratio,ndcg10,intra_cs,intra_ed,status", 0) == 0);
  // ratio column: alpha/tau for the last cell (0.1, 1)
  CHECK(csv.find("0.1,1,0.1,") != std::string::npos);
}

TEST_CASE("cli: a 1x1 sweep grid equals a plain train+eval with the cell seed") {
  TempDir root("cli-cell");
  write_small_synth(root.path / "synth.json");
  write_model_cfg(root.path / "model.json", 0.5, 2);
  std::string b = root.path.string();
  REQUIRE(run("synth --out " + b + "/data --config " + b + "/synth.json") == 0);
  REQUIRE(run("split --data " + b + "/data --out " + b + "/split --seed 1") == 0);
  REQUIRE(run("sweep --data " + b + "/data --split " + b + "/split --config " + b +
              "/model.json --out " + b + "/sweep --seed 4 --alphas 0.5 --taus 5") == 0);
  // plain train with the derived cell seed; the config already has alpha=0.5, tau=5
  uint64_t cell_seed = hash64(4, "sweep.cell.0.0");
  REQUIRE(run("train --data " + b + "/data --split " + b + "/split --config " + b +
              "/model.json --out " + b + "/run --seed " + std::to_string(cell_seed)) == 0);
  REQUIRE(run("eval --data " + b + "/data --split " + b + "/split --run " + b + "/run --out " + b +
              "/eval") == 0);
  auto sweep = nlohmann::json::parse(read_text_file(root.path / "sweep" / "sweep.json"));
  auto metrics = nlohmann::json::parse(read_text_file(root.path / "eval" / "metrics.json"));
  CHECK(sweep.at("rows")[0].at("ndcg10").get<double>() ==
        doctest::Approx(metrics.at("mean").at("ndcg").get<double>()).epsilon(1e-12));
}

TEST_CASE("cli: compare run against itself and against a shifted copy") {
  TempDir root("cli-compare");
  write_small_synth(root.path / "synth.json");
  write_model_cfg(root.path / "model.json", 0.0, 2);
  std::string b = root.path.string();
  REQUIRE(run("synth --out " + b + "/data --config " + b + "/synth.json") == 0);
  REQUIRE(run("split --data " + b + "/data --out " + b + "/split --seed 1") == 0);
  REQUIRE(run("train --data " + b + "/data --split " + b + "/split --config " + b +
              "/model.json --out " + b + "/run --seed 2") == 0);
  REQUIRE(run("eval --data " + b + "/data --split " + b + "/split --run " + b + "/run --out " + b +
              "/eval") == 0);
  REQUIRE(run("compare --a " + b + "/eval --b " + b + "/eval --metric ndcg --n-comparisons 4 --out " +
              b + "/cmp_self") == 0);
  auto self = nlohmann::json::parse(read_text_file(root.path / "cmp_self" / "compare.json"));
  CHECK(self.at("p").get<double>() == 1.0);
  CHECK(self.at("significant").get<bool>() == false);
  CHECK(self.at("threshold").get<double>() == doctest::Approx(0.0125));

  // shifted copy: +0.1 on every per-user ndcg value
  MetricReport r = load_metric_report(root.path / "eval");
  for (double& v : r.per_user.at("ndcg")) v += 0.1;
  write_metric_report(r, root.path / "eval_shifted");
  REQUIRE(run("compare --a " + b + "/eval_shifted --b " + b + "/eval --metric ndcg "
              "--n-comparisons 100 --out " + b + "/cmp_shift") == 0);
  auto shift = nlohmann::json::parse(read_text_file(root.path / "cmp_shift" / "compare.json"));
  CHECK(shift.at("significant").get<bool>() == true);
  CHECK(shift.at("p").get<double>() < 0.05 / 100);
}

TEST_CASE("cli: compare rejects runs with different user sets") {
  TempDir root("cli-mismatch");
  write_small_synth(root.path / "synth.json");
  write_model_cfg(root.path / "model.json", 0.0, 2);
  std::string b = root.path.string();
  REQUIRE(run("synth --out " + b + "/data --config " + b + "/synth.json") == 0);
  REQUIRE(run("split --data " + b + "/data --out " + b + "/split --seed 1") == 0);
  REQUIRE(run("train --data " + b + "/data --split " + b + "/split --config " + b +
              "/model.json --out " + b + "/run --seed 2") == 0);
  REQUIRE(run("eval --data " + b + "/data --split " + b + "/split --run " + b + "/run --out " + b +
              "/eval") == 0);
  MetricReport r = load_metric_report(root.path / "eval");
  r.users.pop_back();
  for (auto& [name, v] : r.per_user) v.pop_back();
  write_metric_report(r, root.path / "eval_short");
  CHECK(run("compare --a " + b + "/eval --b " + b + "/eval_short --metric ndcg") == 1);
}

TEST_CASE("cli: subcommands do not mutate their input directories") {
  TempDir root("cli-inputs");
  write_small_synth(root.path / "synth.json");
  write_model_cfg(root.path / "model.json", 0.5, 2);
  std::string b = root.path.string();
  REQUIRE(run("synth --out " + b + "/data --config " + b + "/synth.json") == 0);
  uint64_t data_hash = hash_directory(root.path / "data");
  REQUIRE(run("split --data " + b + "/data --out " + b + "/split --seed 1") == 0);
  CHECK(hash_directory(root.path / "data") == data_hash);
  uint64_t split_hash = hash_directory(root.path / "split");
  REQUIRE(run("train --data " + b + "/data --split " + b + "/split --config " + b +
              "/model.json --out " + b + "/run --seed 2") == 0);
  CHECK(hash_directory(root.path / "data") == data_hash);
  CHECK(hash_directory(root.path / "split") == split_hash);
}

TEST_CASE("cli: report concatenates a run's CSV outputs") {
  TempDir root("cli-report");
  write_small_synth(root.path / "synth.json");
  write_model_cfg(root.path / "model.json", 0.0, 2);
  std::string b = root.path.string();
  REQUIRE(run("synth --out " + b + "/data --config " + b + "/synth.json") == 0);
  REQUIRE(run("split --data " + b + "/data --out " + b + "/split --seed 1") == 0);
  REQUIRE(run("train --data " + b + "/data --split " + b + "/split --config " + b +
              "/model.json --out " + b + "/run --seed 2") == 0);
  REQUIRE(run("eval --data " + b + "/data --split " + b + "/split --run " + b + "/run --out " + b +
              "/eval") == 0);
  REQUIRE(run("report --run " + b + "/eval") == 0);
  std::string md = read_text_file(root.path / "eval" / "report.md");
  CHECK(md.find("metrics.csv") != std::string::npos);
  CHECK(md.find("per_user.csv") != std::string::npos);
}

TEST_CASE("cli: exit codes distinguish validation errors") {
  TempDir root("cli-exit");
  CHECK(run("split --data " + (root.path / "nope").string() + " --out " +
            (root.path / "o").string() + " --seed 1") == 1);
  CHECK(run("eval --data x --split y --run z --out " + (root.path / "o2").string()) == 1);
}
