#include "mmrec/gap.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mmrec/autodiff.hpp"
#include "mmrec/common.hpp"
#include "mmrec/metrics.hpp"

namespace mmrec {

namespace fs = std::filesystem;

EmbeddingBank build_bank(RecModel& model, std::span<const int> entities,
                         const std::vector<std::string>& modalities) {
  const std::vector<std::string>& trained = model.eval_modalities();
  if (trained.empty()) throw ValidationError("model has no modality encoders to bank");
  std::vector<std::string> names = modalities.empty() ? trained : modalities;
  std::vector<int> ids = resolve_subset(model, names);

  model.set_train(false);
  // Keep only entities with every listed modality available so all matrices align.
  std::vector<int> usable;
  {
    std::vector<uint8_t> valid;
    for (size_t r = 0; r < entities.size(); ++r) usable.push_back(entities[r]);
    for (int id : ids) {
      std::vector<int> next;
      model.embed_items(usable, {id}, &valid);
      for (size_t r = 0; r < usable.size(); ++r)
        if (valid[r]) next.push_back(usable[r]);
      usable = std::move(next);
    }
  }
  if (usable.empty()) throw ValidationError("no entity has all requested modalities available");

  EmbeddingBank bank;
  bank.modalities = names;
  bank.items = usable;
  for (int id : ids) bank.embs.push_back(model.modality_embeddings(id, usable));
  return bank;
}

namespace {

double pair_value(const float* a, const float* b, size_t d, GapMetric f) {
  if (f == GapMetric::euclidean) {
    double s = 0;
    for (size_t j = 0; j < d; ++j) {
      double diff = static_cast<double>(a[j]) - static_cast<double>(b[j]);
      s += diff * diff;
    }
    return std::sqrt(s);
  }
  double dot = 0, na = 0, nb = 0;
  for (size_t j = 0; j < d; ++j) {
    dot += static_cast<double>(a[j]) * static_cast<double>(b[j]);
    na += static_cast<double>(a[j]) * static_cast<double>(a[j]);
    nb += static_cast<double>(b[j]) * static_cast<double>(b[j]);
  }
  double denom = std::sqrt(na) * std::sqrt(nb);
  return denom > 1e-30 ? dot / denom : 0.0;
}

}  // namespace

double intra_metric(const EmbeddingBank& bank, GapMetric f) {
  size_t n_mod = bank.embs.size(), n = bank.items.size();
  if (n_mod < 2) throw ValidationError("intra_metric needs at least 2 modalities");
  size_t d = bank.embs[0].cols();
  // Per-item partials computed independently; the final reduction is serial in
  // item order so the value is identical for any thread count.
  std::vector<double> partial(n, 0.0);
#pragma omp parallel for schedule(static)
  for (long long j = 0; j < static_cast<long long>(n); ++j) {
    double s = 0;
    for (size_t k = 1; k < n_mod; ++k)
      for (size_t l = 0; l < k; ++l)
        s += pair_value(bank.embs[k].row_ptr(static_cast<size_t>(j)),
                        bank.embs[l].row_ptr(static_cast<size_t>(j)), d, f);
    partial[static_cast<size_t>(j)] = s;
  }
  double total = 0;
  for (double p : partial) total += p;
  double pairs_per_item = static_cast<double>(n_mod) * static_cast<double>(n_mod - 1) / 2.0;
  return total / (static_cast<double>(n) * pairs_per_item);
}

double inter_metric(const EmbeddingBank& bank, GapMetric f) {
  size_t n_mod = bank.embs.size(), n = bank.items.size();
  if (n < 2) throw ValidationError("inter_metric needs at least 2 items");
  size_t d = bank.embs[0].cols();
  double total = 0;
  for (size_t k = 0; k < n_mod; ++k) {
    std::vector<double> partial(n, 0.0);
#pragma omp parallel for schedule(static)
    for (long long i = 1; i < static_cast<long long>(n); ++i) {
      double s = 0;
      for (long long j = 0; j < i; ++j)
        s += pair_value(bank.embs[k].row_ptr(static_cast<size_t>(i)),
                        bank.embs[k].row_ptr(static_cast<size_t>(j)), d, f);
      partial[static_cast<size_t>(i)] = s;
    }
    for (double p : partial) total += p;
  }
  double pairs = static_cast<double>(n) * static_cast<double>(n - 1) / 2.0;
  return total / (static_cast<double>(n_mod) * pairs);
}

void symmetric_eigen(const TensorT<double>& matrix, std::vector<double>& eigenvalues,
                     TensorT<double>& eigenvectors) {
  size_t d = matrix.rows();
  if (matrix.cols() != d) throw ValidationError("symmetric_eigen: square matrix required");
  TensorT<double> a = matrix;
  eigenvectors = TensorT<double>({d, d});
  for (size_t i = 0; i < d; ++i) eigenvectors.at(i, i) = 1.0;

  auto off_norm = [&]() {
    double s = 0;
    for (size_t i = 0; i < d; ++i)
      for (size_t j = i + 1; j < d; ++j) s += a.at(i, j) * a.at(i, j);
    return s;
  };
  double scale = 0;
  for (size_t i = 0; i < d; ++i)
    for (size_t j = 0; j < d; ++j) scale += a.at(i, j) * a.at(i, j);
  double tol = 1e-24 * std::max(scale, 1e-300);

  for (int sweep = 0; sweep < 100 && off_norm() > tol; ++sweep) {
    for (size_t p = 0; p < d; ++p)
      for (size_t q = p + 1; q < d; ++q) {
        double apq = a.at(p, q);
        if (std::abs(apq) < 1e-300) continue;
        double app = a.at(p, p), aqq = a.at(q, q);
        double theta = (aqq - app) / (2.0 * apq);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (size_t k = 0; k < d; ++k) {
          double akp = a.at(k, p), akq = a.at(k, q);
          a.at(k, p) = c * akp - s * akq;
          a.at(k, q) = s * akp + c * akq;
        }
        for (size_t k = 0; k < d; ++k) {
          double apk = a.at(p, k), aqk = a.at(q, k);
          a.at(p, k) = c * apk - s * aqk;
          a.at(q, k) = s * apk + c * aqk;
        }
        for (size_t k = 0; k < d; ++k) {
          double vkp = eigenvectors.at(k, p), vkq = eigenvectors.at(k, q);
          eigenvectors.at(k, p) = c * vkp - s * vkq;
          eigenvectors.at(k, q) = s * vkp + c * vkq;
        }
      }
  }
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return a.at(static_cast<size_t>(x), static_cast<size_t>(x)) >
                                       a.at(static_cast<size_t>(y), static_cast<size_t>(y)); });
  eigenvalues.resize(d);
  TensorT<double> sorted({d, d});
  for (size_t r = 0; r < d; ++r) {
    size_t src = static_cast<size_t>(order[r]);
    eigenvalues[r] = a.at(src, src);
    for (size_t k = 0; k < d; ++k) sorted.at(r, k) = eigenvectors.at(k, src);  // rows = components
  }
  eigenvectors = std::move(sorted);
}

PcaResult pca_project(const EmbeddingBank& bank, size_t n_components) {
  size_t n_mod = bank.embs.size(), n = bank.items.size();
  size_t d = bank.embs[0].cols();
  if (n_components > d) throw ValidationError("pca_project: n_components exceeds embedding dim");
  size_t rows = n_mod * n;

  PcaResult res;
  res.mean.assign(d, 0.0);
  for (const Tensor& e : bank.embs)
    for (size_t i = 0; i < n; ++i)
      for (size_t j = 0; j < d; ++j) res.mean[j] += static_cast<double>(e.at(i, j));
  for (double& m : res.mean) m /= static_cast<double>(rows);

  TensorT<double> cov({d, d});
  for (const Tensor& e : bank.embs)
    for (size_t i = 0; i < n; ++i)
      for (size_t a = 0; a < d; ++a) {
        double ca = static_cast<double>(e.at(i, a)) - res.mean[a];
        for (size_t b = a; b < d; ++b)
          cov.at(a, b) += ca * (static_cast<double>(e.at(i, b)) - res.mean[b]);
      }
  double denom = rows > 1 ? static_cast<double>(rows - 1) : 1.0;
  for (size_t a = 0; a < d; ++a)
    for (size_t b = a; b < d; ++b) {
      cov.at(a, b) /= denom;
      cov.at(b, a) = cov.at(a, b);
    }

  std::vector<double> eigvals;
  TensorT<double> eigvecs;
  symmetric_eigen(cov, eigvals, eigvecs);

  double trace = 0;
  for (double v : eigvals) trace += std::max(v, 0.0);
  res.explained_ratio.resize(n_components);
  res.components = TensorT<double>({n_components, d});
  for (size_t c = 0; c < n_components; ++c) {
    res.explained_ratio[c] = trace > 0 ? std::max(eigvals[c], 0.0) / trace : 0.0;
    // Sign convention: the largest-magnitude coordinate is positive.
    size_t arg = 0;
    for (size_t j = 1; j < d; ++j)
      if (std::abs(eigvecs.at(c, j)) > std::abs(eigvecs.at(c, arg))) arg = j;
    double sign = eigvecs.at(c, arg) < 0 ? -1.0 : 1.0;
    for (size_t j = 0; j < d; ++j) res.components.at(c, j) = sign * eigvecs.at(c, j);
  }

  for (const Tensor& e : bank.embs) {
    Tensor proj({n, n_components});
    for (size_t i = 0; i < n; ++i)
      for (size_t c = 0; c < n_components; ++c) {
        double s = 0;
        for (size_t j = 0; j < d; ++j)
          s += (static_cast<double>(e.at(i, j)) - res.mean[j]) * res.components.at(c, j);
        proj.at(i, c) = static_cast<float>(s);
      }
    res.projected.push_back(std::move(proj));
  }
  return res;
}

namespace {

// Multinomial logistic probe trained with full-batch Adam to convergence.
struct LogisticProbe {
  Parameter w, b;
  int n_classes;

  LogisticProbe(size_t dim, int classes, uint64_t seed)
      : w("probe.w", Tensor({static_cast<size_t>(classes), dim})),
        b("probe.b", Tensor({static_cast<size_t>(classes)})),
        n_classes(classes) {
    SeededRng rng(seed, "probe-init");
    double bound = std::sqrt(6.0 / static_cast<double>(dim + static_cast<size_t>(classes)));
    for (float& v : w.value.data) v = static_cast<float>((rng.next_double() * 2.0 - 1.0) * bound);
  }

  void fit(const Tensor& x, const std::vector<int>& y) {
    std::vector<Parameter*> params{&w, &b};
    AdamConfig adam{0.05, 0.9, 0.999, 1e-8, 0.0};
    double prev = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= 500; ++it) {
      Graph g;
      auto logits = g.linear(g.input(x), w, &b);
      auto loss = g.scale(g.softmax_xent(logits, 1.0f, y), 1.0f / static_cast<float>(x.rows()));
      double lv = static_cast<double>(g.value(loss).data[0]);
      g.backward(loss);
      adam_step<float>(params, adam, it);
      if (std::abs(prev - lv) < 1e-8 * (1.0 + std::abs(lv))) break;
      prev = lv;
    }
  }

  double accuracy(const Tensor& x, const std::vector<int>& y) const {
    size_t n = x.rows(), d = x.cols();
    size_t correct = 0;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < n_classes; ++c) {
        double s = static_cast<double>(b.value.data[static_cast<size_t>(c)]);
        for (size_t j = 0; j < d; ++j)
          s += static_cast<double>(w.value.at(static_cast<size_t>(c), j)) *
               static_cast<double>(x.at(i, j));
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      if (best == y[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(n);
  }
};

}  // namespace

double probe_accuracy_once(const Tensor& train_x, const std::vector<int>& train_y, const Tensor& test_x,
                           const std::vector<int>& test_y, int n_classes, uint64_t seed) {
  LogisticProbe probe(train_x.cols(), n_classes, seed);
  probe.fit(train_x, train_y);
  return probe.accuracy(test_x, test_y);
}

ProbeResult separability_probe(const EmbeddingBank& bank, double split_ratio, int n_seeds, uint64_t seed) {
  size_t n_mod = bank.embs.size(), n = bank.items.size();
  if (n < 10) throw ValidationError("separability_probe needs at least 10 items");
  size_t d = bank.embs[0].cols();
  ProbeResult res;
  res.random_baseline = 1.0 / static_cast<double>(n_mod);
  for (int s = 0; s < n_seeds; ++s) {
    // Item-level split: all modality rows of an item stay on one side.
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    SeededRng rng(seed, "probe-split." + std::to_string(s));
    rng.shuffle(order);
    size_t n_train = static_cast<size_t>(split_ratio * static_cast<double>(n));
    n_train = std::min(std::max<size_t>(n_train, 1), n - 1);
    auto gather = [&](size_t begin, size_t end, Tensor& x, std::vector<int>& y) {
      x = Tensor({(end - begin) * n_mod, d});
      y.resize((end - begin) * n_mod);
      size_t r = 0;
      for (size_t m = 0; m < n_mod; ++m)
        for (size_t t = begin; t < end; ++t, ++r) {
          std::copy_n(bank.embs[m].row_ptr(static_cast<size_t>(order[t])), d, x.row_ptr(r));
          y[r] = static_cast<int>(m);
        }
    };
    Tensor train_x, test_x;
    std::vector<int> train_y, test_y;
    gather(0, n_train, train_x, train_y);
    gather(n_train, n, test_x, test_y);
    res.per_seed_accuracy.push_back(probe_accuracy_once(train_x, train_y, test_x, test_y,
                                                        static_cast<int>(n_mod),
                                                        hash64(seed, "probe." + std::to_string(s))));
  }
  res.mean_accuracy = compensated_mean(res.per_seed_accuracy);
  return res;
}

void write_gap_csv(const EmbeddingBank& bank, const fs::path& dir) {
  fs::create_directories(dir);
  std::string csv = "metric,value\n";
  csv += "intra_ed," + fmt_double(intra_metric(bank, GapMetric::euclidean)) + "\n";
  csv += "intra_cs," + fmt_double(intra_metric(bank, GapMetric::cosine)) + "\n";
  csv += "inter_ed," + fmt_double(inter_metric(bank, GapMetric::euclidean)) + "\n";
  csv += "inter_cs," + fmt_double(inter_metric(bank, GapMetric::cosine)) + "\n";
  write_text_file(dir / "gap.csv", csv);
}

void write_projection_csv(const EmbeddingBank& bank, const PcaResult& pca, const fs::path& dir,
                          size_t max_items, uint64_t seed) {
  fs::create_directories(dir);
  size_t n = bank.items.size();
  std::vector<int> keep(n);
  std::iota(keep.begin(), keep.end(), 0);
  if (n > max_items) {
    SeededRng rng(seed, "projection-subsample");
    rng.shuffle(keep);
    keep.resize(max_items);
    std::sort(keep.begin(), keep.end());
  }
  std::string csv = "item_index,modality,x,y\n";
  for (size_t m = 0; m < bank.modalities.size(); ++m)
    for (int r : keep)
      csv += std::to_string(bank.items[static_cast<size_t>(r)]) + "," + bank.modalities[m] + "," +
             fmt_float(pca.projected[m].at(static_cast<size_t>(r), 0)) + "," +
             fmt_float(pca.projected[m].at(static_cast<size_t>(r), 1)) + "\n";
  write_text_file(dir / "projection.csv", csv);
}

void write_probe_csv(const ProbeResult& probe, const fs::path& dir) {
  fs::create_directories(dir);
  std::string csv = "seed,accuracy\n";
  for (size_t s = 0; s < probe.per_seed_accuracy.size(); ++s)
    csv += std::to_string(s) + "," + fmt_double(probe.per_seed_accuracy[s]) + "\n";
  write_text_file(dir / "probe.csv", csv);
}

}  // namespace mmrec
