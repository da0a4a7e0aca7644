#include "mmrec/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "mmrec/common.hpp"

namespace mmrec {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_text_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open file: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& p, std::string_view content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write file: " + p.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

uint64_t hash_file(const fs::path& p) {
  return fnv1a64(read_text_file(p));
}

uint64_t hash_directory(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    h = fnv1a64(fs::relative(f, dir).generic_string(), h);
    h = fnv1a64(read_text_file(f), h);
  }
  return h;
}

void Dataset::rebuild_adjacency() {
  user_items.assign(n_users, {});
  item_users.assign(n_items, {});
  for (auto [u, i] : interactions) {
    user_items[static_cast<size_t>(u)].push_back(i);
    item_users[static_cast<size_t>(i)].push_back(u);
  }
  for (auto& v : user_items) std::sort(v.begin(), v.end());
  for (auto& v : item_users) std::sort(v.begin(), v.end());
}

namespace {

std::vector<std::string> read_lines(const fs::path& p) {
  std::string text = read_text_file(p);
  std::vector<std::string> lines;
  std::string cur;
  for (char c : text) {
    if (c == '\n') {
      if (!cur.empty() && cur.back() == '\r') cur.pop_back();
      lines.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) lines.push_back(cur);
  return lines;
}

std::vector<std::string> load_registry(const fs::path& p, const char* what) {
  std::vector<std::string> ids = read_lines(p);
  while (!ids.empty() && ids.back().empty()) ids.pop_back();
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (id.empty()) throw ValidationError(std::string(what) + " registry has an empty id line: " + p.string());
    if (!seen.insert(id).second)
      throw ValidationError(std::string(what) + " registry has duplicate raw id '" + id + "': " + p.string());
  }
  return ids;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  size_t start = 0;
  for (size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == '\t') {
      fields.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return fields;
}

}  // namespace

Manifest parse_manifest(const fs::path& manifest_path) {
  if (!fs::exists(manifest_path)) throw ValidationError("manifest not found: " + manifest_path.string());
  json j;
  try {
    j = json::parse(read_text_file(manifest_path));
  } catch (const json::exception& e) {
    throw ValidationError("manifest is not valid JSON: " + std::string(e.what()));
  }
  Manifest m;
  m.name = j.value("name", "dataset");
  m.users_file = j.at("users_file").get<std::string>();
  m.items_file = j.at("items_file").get<std::string>();
  m.interactions_file = j.at("interactions_file").get<std::string>();
  std::set<std::pair<std::string, std::string>> names;
  for (const auto& jm : j.value("modalities", json::array())) {
    ManifestModality mm;
    mm.name = jm.at("name").get<std::string>();
    mm.entity = jm.at("entity").get<std::string>();
    mm.dim = jm.at("dim").get<size_t>();
    mm.file = jm.at("file").get<std::string>();
    mm.format = jm.value("format", "mmr1");
    mm.mask_file = jm.value("mask_file", "");
    if (mm.entity != "user" && mm.entity != "item")
      throw ValidationError("modality '" + mm.name + "' has unknown entity '" + mm.entity + "'");
    if (mm.name == "interactions")
      throw ValidationError("'interactions' is a reserved modality name (derived from the interaction matrix)");
    if (mm.dim == 0) throw ValidationError("modality '" + mm.name + "' must have positive dim");
    if (!names.insert({mm.entity, mm.name}).second)
      throw ValidationError("duplicate modality name '" + mm.name + "' for entity " + mm.entity);
    m.modalities.push_back(std::move(mm));
  }
  return m;
}

Tensor load_mmr1(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ValidationError("cannot open matrix file: " + p.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "MMR1", 4) != 0)
    throw ValidationError("bad magic in matrix file (expected MMR1): " + p.string());
  uint32_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 4);
  in.read(reinterpret_cast<char*>(&cols), 4);
  if (!in) throw ValidationError("truncated matrix header: " + p.string());
  Tensor m({rows, cols});
  in.read(reinterpret_cast<char*>(m.data.data()), static_cast<std::streamsize>(m.numel() * sizeof(float)));
  if (!in || in.gcount() != static_cast<std::streamsize>(m.numel() * sizeof(float)))
    throw ValidationError("truncated matrix payload: " + p.string());
  return m;
}

void save_mmr1(const fs::path& p, const Tensor& m) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write matrix file: " + p.string());
  out.write("MMR1", 4);
  uint32_t rows = static_cast<uint32_t>(m.rows()), cols = static_cast<uint32_t>(m.cols());
  out.write(reinterpret_cast<const char*>(&rows), 4);
  out.write(reinterpret_cast<const char*>(&cols), 4);
  out.write(reinterpret_cast<const char*>(m.data.data()),
            static_cast<std::streamsize>(m.numel() * sizeof(float)));
}

Tensor load_matrix_csv(const fs::path& p, const std::vector<std::string>& registry_ids, size_t expected_dim) {
  std::vector<std::string> lines = read_lines(p);
  if (lines.empty()) throw ValidationError("empty matrix csv: " + p.string());
  // header: id,v0,...,v{d-1}
  size_t header_cols = static_cast<size_t>(std::count(lines[0].begin(), lines[0].end(), ',')) + 1;
  if (header_cols < 2) throw ValidationError("matrix csv header needs id plus value columns: " + p.string());
  size_t d = header_cols - 1;
  if (d != expected_dim)
    throw ValidationError("dimension mismatch in " + p.string() + ": manifest declares " +
                          std::to_string(expected_dim) + ", file header has " + std::to_string(d));
  std::unordered_map<std::string, size_t> index;
  for (size_t i = 0; i < registry_ids.size(); ++i) index[registry_ids[i]] = i;
  Tensor m({registry_ids.size(), d});
  std::vector<uint8_t> seen(registry_ids.size(), 0);
  for (size_t li = 1; li < lines.size(); ++li) {
    if (lines[li].empty()) continue;
    std::stringstream ss(lines[li]);
    std::string field;
    std::getline(ss, field, ',');
    auto it = index.find(field);
    if (it == index.end())
      throw ValidationError("matrix csv row id '" + field + "' not in registry: " + p.string());
    if (seen[it->second]) throw ValidationError("matrix csv has duplicate row for id '" + field + "'");
    seen[it->second] = 1;
    for (size_t j = 0; j < d; ++j) {
      if (!std::getline(ss, field, ','))
        throw ValidationError("matrix csv row for id '" + lines[li] + "' is short: " + p.string());
      m.at(it->second, j) = std::stof(field);
    }
  }
  for (size_t i = 0; i < seen.size(); ++i)
    if (!seen[i]) throw ValidationError("matrix csv missing row for id '" + registry_ids[i] + "'");
  return m;
}

std::vector<uint8_t> load_mask(const fs::path& p, size_t n_entities) {
  std::vector<std::string> lines = read_lines(p);
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.size() != n_entities)
    throw ValidationError("mask file has " + std::to_string(lines.size()) + " lines, expected " +
                          std::to_string(n_entities) + ": " + p.string());
  std::vector<uint8_t> mask(n_entities);
  for (size_t i = 0; i < n_entities; ++i) {
    if (lines[i] == "0")
      mask[i] = 0;
    else if (lines[i] == "1")
      mask[i] = 1;
    else
      throw ValidationError("mask line " + std::to_string(i + 1) + " must be 0 or 1: " + p.string());
  }
  return mask;
}

Dataset load_dataset(const fs::path& manifest_path) {
  Manifest man = parse_manifest(manifest_path);
  fs::path base = manifest_path.parent_path();

  Dataset d;
  d.name = man.name;
  d.user_ids = load_registry(base / man.users_file, "user");
  d.item_ids = load_registry(base / man.items_file, "item");
  d.n_users = d.user_ids.size();
  d.n_items = d.item_ids.size();

  std::unordered_map<std::string, int> uidx, iidx;
  for (size_t i = 0; i < d.user_ids.size(); ++i) uidx[d.user_ids[i]] = static_cast<int>(i);
  for (size_t i = 0; i < d.item_ids.size(); ++i) iidx[d.item_ids[i]] = static_cast<int>(i);

  std::set<std::pair<int, int>> pairs;
  fs::path inter_path = base / man.interactions_file;
  size_t line_no = 0;
  for (const std::string& line : read_lines(inter_path)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f = split_tabs(line);
    if (f.size() < 2)
      throw ValidationError("interactions line " + std::to_string(line_no) + " needs user<TAB>item: " +
                            inter_path.string());
    auto ui = uidx.find(f[0]);
    if (ui == uidx.end())
      throw ValidationError("interactions line " + std::to_string(line_no) + ": unknown user raw id '" +
                            f[0] + "'");
    auto ii = iidx.find(f[1]);
    if (ii == iidx.end())
      throw ValidationError("interactions line " + std::to_string(line_no) + ": unknown item raw id '" +
                            f[1] + "'");
    pairs.insert({ui->second, ii->second});
  }
  d.interactions.assign(pairs.begin(), pairs.end());

  for (const ManifestModality& mm : man.modalities) {
    ModalityStore store;
    store.name = mm.name;
    store.entity = mm.entity;
    store.dim = mm.dim;
    const std::vector<std::string>& reg = (mm.entity == "user") ? d.user_ids : d.item_ids;
    fs::path file = base / mm.file;
    if (!fs::exists(file)) throw ValidationError("modality file not found: " + file.string());
    if (mm.format == "mmr1") {
      store.matrix = load_mmr1(file);
      if (store.matrix.rows() != reg.size())
        throw ValidationError("modality '" + mm.name + "' has " + std::to_string(store.matrix.rows()) +
                              " rows, expected " + std::to_string(reg.size()));
      if (store.matrix.cols() != mm.dim)
        throw ValidationError("dimension mismatch for modality '" + mm.name + "': manifest declares " +
                              std::to_string(mm.dim) + ", file has " + std::to_string(store.matrix.cols()));
    } else if (mm.format == "csv") {
      store.matrix = load_matrix_csv(file, reg, mm.dim);
    } else {
      throw ValidationError("unknown modality format '" + mm.format + "'");
    }
    store.available.assign(reg.size(), 1);
    if (!mm.mask_file.empty()) store.available = load_mask(base / mm.mask_file, reg.size());
    for (size_t r = 0; r < reg.size(); ++r) {
      if (!store.available[r]) continue;
      const float* row = store.matrix.row_ptr(r);
      for (size_t c = 0; c < store.dim; ++c)
        if (!std::isfinite(row[c]))
          throw ValidationError("modality '" + mm.name + "' has non-finite value in available row " +
                                std::to_string(r));
    }
    if (mm.entity == "user")
      d.user_modalities.push_back(std::move(store));
    else
      d.item_modalities.push_back(std::move(store));
  }

  d.rebuild_adjacency();
  return d;
}

void save_dataset(const Dataset& d, const fs::path& dir) {
  fs::create_directories(dir);
  std::string users, items, inter;
  for (const auto& id : d.user_ids) users += id + "\n";
  for (const auto& id : d.item_ids) items += id + "\n";
  for (auto [u, i] : d.interactions)
    inter += d.user_ids[static_cast<size_t>(u)] + "\t" + d.item_ids[static_cast<size_t>(i)] + "\n";
  write_text_file(dir / "users.tsv", users);
  write_text_file(dir / "items.tsv", items);
  write_text_file(dir / "interactions.tsv", inter);

  json j;
  j["name"] = d.name;
  j["users_file"] = "users.tsv";
  j["items_file"] = "items.tsv";
  j["interactions_file"] = "interactions.tsv";
  j["modalities"] = json::array();
  auto dump_mod = [&](const ModalityStore& s) {
    std::string stem = "mod_" + s.entity + "_" + s.name;
    save_mmr1(dir / (stem + ".bin"), s.matrix);
    json jm{{"name", s.name}, {"entity", s.entity}, {"dim", s.dim}, {"file", stem + ".bin"},
            {"format", "mmr1"}};
    bool all = std::all_of(s.available.begin(), s.available.end(), [](uint8_t b) { return b != 0; });
    if (!all) {
      std::string mask;
      for (uint8_t b : s.available) mask += (b ? "1\n" : "0\n");
      write_text_file(dir / (stem + ".mask"), mask);
      jm["mask_file"] = stem + ".mask";
    }
    j["modalities"].push_back(jm);
  };
  for (const auto& s : d.user_modalities) dump_mod(s);
  for (const auto& s : d.item_modalities) dump_mod(s);
  write_text_file(dir / "dataset.json", j.dump(2) + "\n");
}

std::vector<std::pair<std::string, std::string>> binarize_feedback(
    const std::vector<std::tuple<std::string, std::string, double>>& raw_triples, double threshold) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& [u, i, v] : raw_triples)
    if (v >= threshold) out.emplace_back(u, i);
  return out;
}

std::vector<std::pair<int, int>> core_filter(const std::vector<std::pair<int, int>>& pairs, int k_user,
                                             int k_item) {
  if (k_user < 1 || k_item < 1) throw ValidationError("core_filter: k_user and k_item must be >= 1");
  std::map<int, int> user_deg, item_deg;
  for (auto [u, i] : pairs) {
    ++user_deg[u];
    ++item_deg[i];
  }
  std::vector<uint8_t> alive(pairs.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    for (size_t p = 0; p < pairs.size(); ++p) {
      if (!alive[p]) continue;
      auto [u, i] = pairs[p];
      if (user_deg[u] < k_user || item_deg[i] < k_item) {
        alive[p] = 0;
        --user_deg[u];
        --item_deg[i];
        changed = true;
      }
    }
  }
  std::vector<std::pair<int, int>> out;
  for (size_t p = 0; p < pairs.size(); ++p)
    if (alive[p]) out.push_back(pairs[p]);
  return out;
}

}  // namespace mmrec
