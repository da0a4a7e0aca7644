#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fstream>
#include <set>

#include "mmrec/common.hpp"
#include "mmrec/dataset.hpp"
#include "test_util.hpp"

using namespace mmrec;
using mmrec::test::TempDir;
namespace fs = std::filesystem;

namespace {

// Writes a small well-formed dataset directory and returns the manifest path.
fs::path write_sample(const fs::path& dir, size_t mod_dim = 8) {
  write_text_file(dir / "users.tsv", "alice\nbob\ncarol\n");
  write_text_file(dir / "items.tsv", "it1\nit2\nit3\nit4\n");
  write_text_file(dir / "interactions.tsv",
                  "alice\tit1\nalice\tit2\nbob\tit2\ncarol\tit3\ncarol\tit4\n");
  Tensor m({4, mod_dim});
  for (size_t i = 0; i < m.numel(); ++i) m.data[i] = static_cast<float>(i) * 0.5f;
  save_mmr1(dir / "audio.bin", m);
  write_text_file(dir / "dataset.json", R"({
    "name": "sample",
    "users_file": "users.tsv",
    "items_file": "items.tsv",
    "interactions_file": "interactions.tsv",
    "modalities": [{"name": "audio", "entity": "item", "dim": )" +
                                           std::to_string(mod_dim) + R"(, "file": "audio.bin"}]
  })");
  return dir / "dataset.json";
}

}  // namespace

TEST_CASE("load_dataset: counts and indices from a small manifest") {
  TempDir dir("load");
  Dataset d = load_dataset(write_sample(dir));
  CHECK(d.n_users == 3);
  CHECK(d.n_items == 4);
  CHECK(d.interactions.size() == 5);
  CHECK(d.user_ids[0] == "alice");  // index = line number
  CHECK(d.item_ids[3] == "it4");
  CHECK(d.item_modalities.size() == 1);
  CHECK(d.item_modalities[0].dim == 8);
}

TEST_CASE("load_dataset: duplicate interaction pairs are stored once") {
  TempDir dir("dup");
  write_sample(dir);
  write_text_file(dir.path / "interactions.tsv", "alice\tit1\nalice\tit1\nbob\tit2\n");
  Dataset d = load_dataset(dir.path / "dataset.json");
  CHECK(d.interactions.size() == 2);
}

TEST_CASE("load_dataset: dimension mismatch between manifest and header errors") {
  TempDir dir("dim");
  write_sample(dir);
  // manifest declares 16 while the matrix has 8 columns
  std::string manifest = read_text_file(dir.path / "dataset.json");
  size_t pos = manifest.find("\"dim\": 8");
  manifest.replace(pos, 8, "\"dim\": 16");
  write_text_file(dir.path / "dataset.json", manifest);
  CHECK_THROWS_WITH_AS(load_dataset(dir.path / "dataset.json"),
                       doctest::Contains("dimension mismatch"), ValidationError);
}

TEST_CASE("load_dataset: unknown raw id in interactions is a hard error") {
  TempDir dir("unknown");
  write_sample(dir);
  write_text_file(dir.path / "interactions.tsv", "alice\tit1\nmallory\tit2\n");
  CHECK_THROWS_WITH_AS(load_dataset(dir.path / "dataset.json"),
                       doctest::Contains("unknown user raw id"), ValidationError);
}

TEST_CASE("load_dataset: duplicate raw id in a registry is an error") {
  TempDir dir("dupid");
  write_sample(dir);
  write_text_file(dir.path / "users.tsv", "alice\nbob\nalice\n");
  CHECK_THROWS_WITH_AS(load_dataset(dir.path / "dataset.json"),
                       doctest::Contains("duplicate raw id"), ValidationError);
}

TEST_CASE("load_dataset: missing files error") {
  TempDir dir("missing");
  write_sample(dir);
  fs::remove(dir.path / "audio.bin");
  CHECK_THROWS_AS(load_dataset(dir.path / "dataset.json"), ValidationError);
  CHECK_THROWS_AS(load_dataset(dir.path / "nope.json"), ValidationError);
}

TEST_CASE("load_dataset: non-finite values in available rows are rejected") {
  TempDir dir("nan");
  write_sample(dir);
  Tensor m({4, 8});
  m.at(2, 3) = std::numeric_limits<float>::quiet_NaN();
  save_mmr1(dir.path / "audio.bin", m);
  CHECK_THROWS_AS(load_dataset(dir.path / "dataset.json"), ValidationError);
  // but a masked-out row may hold anything
  write_text_file(dir.path / "audio.mask", "1\n1\n0\n1\n");
  std::string manifest = read_text_file(dir.path / "dataset.json");
  manifest.replace(manifest.find("\"file\": \"audio.bin\""), 19,
                   "\"file\": \"audio.bin\", \"mask_file\": \"audio.mask\"");
  write_text_file(dir.path / "dataset.json", manifest);
  Dataset d = load_dataset(dir.path / "dataset.json");
  CHECK(d.item_modalities[0].available == std::vector<uint8_t>{1, 1, 0, 1});
}

TEST_CASE("load_dataset is idempotent through save_dataset") {
  TempDir dir("idem");
  Dataset d1 = load_dataset(write_sample(dir));
  TempDir dir2("idem2");
  save_dataset(d1, dir2);
  Dataset d2 = load_dataset(dir2.path / "dataset.json");
  CHECK(d1.user_ids == d2.user_ids);
  CHECK(d1.item_ids == d2.item_ids);
  CHECK(d1.interactions == d2.interactions);
  CHECK(d1.item_modalities[0].matrix.data == d2.item_modalities[0].matrix.data);
  // and the directory itself round-trips byte-identically
  TempDir dir3("idem3");
  save_dataset(d2, dir3);
  CHECK(read_text_file(dir2.path / "interactions.tsv") == read_text_file(dir3.path / "interactions.tsv"));
  CHECK(read_text_file(dir2.path / "dataset.json") == read_text_file(dir3.path / "dataset.json"));
}

TEST_CASE("matrix csv loader matches ids against the registry") {
  TempDir dir("csv");
  std::vector<std::string> ids{"a", "b"};
  write_text_file(dir.path / "m.csv", "id,v0,v1\nb,3,4\na,1,2\n");
  Tensor m = load_matrix_csv(dir.path / "m.csv", ids, 2);
  CHECK(m.at(0, 0) == 1.f);
  CHECK(m.at(1, 1) == 4.f);
  write_text_file(dir.path / "bad.csv", "id,v0,v1\nb,3,4\nzz,1,2\n");
  CHECK_THROWS_AS(load_matrix_csv(dir.path / "bad.csv", ids, 2), ValidationError);
  write_text_file(dir.path / "short.csv", "id,v0,v1\na,1,2\n");
  CHECK_THROWS_WITH_AS(load_matrix_csv(dir.path / "short.csv", ids, 2),
                       doctest::Contains("missing row"), ValidationError);
}

TEST_CASE("mmr1 round trip and truncation") {
  TempDir dir("mmr1");
  Tensor m({3, 5});
  for (size_t i = 0; i < m.numel(); ++i) m.data[i] = static_cast<float>(i) - 7.5f;
  save_mmr1(dir.path / "m.bin", m);
  Tensor r = load_mmr1(dir.path / "m.bin");
  CHECK(r.shape == m.shape);
  CHECK(r.data == m.data);
  // truncate payload
  std::string bytes = read_text_file(dir.path / "m.bin");
  write_text_file(dir.path / "cut.bin", bytes.substr(0, bytes.size() - 4));
  CHECK_THROWS_WITH_AS(load_mmr1(dir.path / "cut.bin"), doctest::Contains("truncated"),
                       ValidationError);
  write_text_file(dir.path / "magic.bin", "XXXX" + bytes.substr(4));
  CHECK_THROWS_WITH_AS(load_mmr1(dir.path / "magic.bin"), doctest::Contains("magic"), ValidationError);
}

TEST_CASE("binarize_feedback keeps pairs at or above the threshold, in order") {
  std::vector<std::tuple<std::string, std::string, double>> triples{
      {"u1", "i1", 5}, {"u1", "i2", 2}};
  auto out = binarize_feedback(triples, 3);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == std::pair<std::string, std::string>{"u1", "i1"});

  auto all = binarize_feedback(triples, -std::numeric_limits<double>::infinity());
  CHECK(all.size() == 2);

  std::vector<std::tuple<std::string, std::string, double>> counts{{"u1", "i1", 2}, {"u2", "i1", 2}};
  CHECK(binarize_feedback(counts, 2).size() == 2);
}

TEST_CASE("core_filter: fully connected 5x5 grid survives k=5") {
  auto pairs = mmrec::test::full_bipartite(5, 5);
  CHECK(core_filter(pairs, 5, 5).size() == 25);
}

TEST_CASE("core_filter: single pair below threshold vanishes") {
  CHECK(core_filter({{0, 0}}, 5, 5).empty());
}

namespace {

// Exhaustive alternating-deletion oracle: recompute degrees and drop
// undersized entities until stable.
std::set<std::pair<int, int>> core_oracle(std::vector<std::pair<int, int>> pairs, int ku, int ki) {
  bool changed = true;
  while (changed) {
    changed = false;
    std::map<int, int> ud, id;
    for (auto [u, i] : pairs) {
      ++ud[u];
      ++id[i];
    }
    std::vector<std::pair<int, int>> keep;
    for (auto [u, i] : pairs)
      if (ud[u] >= ku && id[i] >= ki) keep.emplace_back(u, i);
    if (keep.size() != pairs.size()) changed = true;
    pairs = std::move(keep);
  }
  return {pairs.begin(), pairs.end()};
}

}  // namespace

TEST_CASE("core_filter: chain removal cascades to the fixed point of the oracle") {
  // user 0 holds on via items 0..4; item 4 only has user 0 and user 1; user 1
  // is weak, its removal drops item 4, which drops user 0 below k.
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < 5; ++i) pairs.emplace_back(0, i);
  pairs.emplace_back(1, 4);
  auto got = core_filter(pairs, 5, 2);
  auto want = core_oracle(pairs, 5, 2);
  CHECK(std::set<std::pair<int, int>>(got.begin(), got.end()) == want);
}

TEST_CASE("core_filter: fixed point matches the oracle on 100 random graphs") {
  for (uint64_t seed = 0; seed < 100; ++seed) {
    SeededRng rng(seed, "core-graphs");
    std::set<std::pair<int, int>> pset;
    size_t n_pairs = 10 + rng.uniform(60);
    for (size_t p = 0; p < n_pairs; ++p)
      pset.insert({static_cast<int>(rng.uniform(8)), static_cast<int>(rng.uniform(8))});
    std::vector<std::pair<int, int>> pairs(pset.begin(), pset.end());
    int ku = 1 + static_cast<int>(rng.uniform(4));
    int ki = 1 + static_cast<int>(rng.uniform(4));
    auto got = core_filter(pairs, ku, ki);
    CHECK(std::set<std::pair<int, int>>(got.begin(), got.end()) == core_oracle(pairs, ku, ki));
    // order independence: shuffling the input yields the same surviving set
    auto shuffled = pairs;
    rng.shuffle(shuffled);
    auto got2 = core_filter(shuffled, ku, ki);
    CHECK(std::set<std::pair<int, int>>(got2.begin(), got2.end()) ==
          std::set<std::pair<int, int>>(got.begin(), got.end()));
  }
}

TEST_CASE("every user with a nonzero profile row counts as having the interactions modality") {
  Dataset d = mmrec::test::tiny_dataset(4, 3, {{0, 0}, {0, 1}, {2, 2}});
  Split s;
  s.train = d.interactions;
  TrainView tv = TrainView::build(d, s);
  size_t with_profile = 0;
  for (size_t u = 0; u < d.n_users; ++u)
    if (!tv.user_pos[u].empty()) ++with_profile;
  CHECK(with_profile == 2);  // users 0 and 2
}
