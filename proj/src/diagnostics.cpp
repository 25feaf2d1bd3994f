#include "forge/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <tuple>

namespace forge {

std::vector<double> symmetric_eigenvalues(std::vector<double> a,
                                          std::size_t n) {
  if (a.size() != n * n) fail("eigenvalues: matrix size mismatch");
  auto at = [&](std::size_t r, std::size_t c) -> double& {
    return a[r * n + c];
  };
  double frob = 0.0;
  for (double v : a) frob += v * v;
  double tol = 1e-14 * std::max(1.0, frob);

  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = r + 1; c < n; ++c) off += at(r, c) * at(r, c);
    if (off <= tol) break;
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        double apq = at(p, q);
        if (apq == 0.0) continue;
        double theta = (at(q, q) - at(p, p)) / (2.0 * apq);
        double t = (theta >= 0.0 ? 1.0 : -1.0) /
                   (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          double akp = at(k, p), akq = at(k, q);
          at(k, p) = c * akp - s * akq;
          at(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          double apk = at(p, k), aqk = at(q, k);
          at(p, k) = c * apk - s * aqk;
          at(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = at(i, i);
  std::sort(eig.begin(), eig.end(), std::greater<>());
  return eig;
}

std::vector<double> singular_values(
    const std::vector<std::vector<double>>& z) {
  if (z.empty() || z[0].empty()) fail("singular_values: empty matrix");
  std::size_t n = z.size(), k = z[0].size();
  for (const auto& row : z) {
    if (row.size() != k) fail("singular_values: ragged matrix");
    if (!all_finite(row)) fail("singular_values: non-finite entry");
  }
  std::vector<double> gram(k * k, 0.0);
  for (const auto& row : z)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = i; j < k; ++j) gram[i * k + j] += row[i] * row[j];
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < i; ++j) gram[i * k + j] = gram[j * k + i];
  auto eig = symmetric_eigenvalues(std::move(gram), k);
  std::vector<double> sv(k);
  for (std::size_t i = 0; i < k; ++i) sv[i] = std::sqrt(std::max(0.0, eig[i]));
  return sv;
}

RankMeReport rankme(const std::vector<std::vector<double>>& z,
                    const RankMeOptions& opts) {
  RankMeReport rep;
  rep.rows = z.size();
  rep.cols = z.empty() ? 0 : z[0].size();
  rep.singular_values = singular_values(z);

  double total = 0.0;
  for (double s : rep.singular_values) total += s;
  if (total <= 0.0) fail("rankme: zero spectrum");
  rep.p.resize(rep.singular_values.size());
  for (std::size_t i = 0; i < rep.p.size(); ++i)
    rep.p[i] = rep.singular_values[i] / total;

  double entropy = 0.0;
  if (opts.literal_epsilon) {
    for (double pk : rep.p) {
      double q = pk + opts.eps;
      entropy -= q * std::log(q);
    }
  } else {
    for (double pk : rep.p)
      if (pk > 0.0) entropy -= pk * std::log(pk);
  }
  rep.score = std::exp(entropy);
  return rep;
}

RankMeReport rankme_checkpoint(const ModelCheckpoint& ckpt,
                               const std::vector<TokenizedSample>& probe,
                               const RankMeOptions& opts) {
  Model model(ckpt.config);
  auto z = model.output_embeddings(ckpt.params, probe, opts.logits);
  auto rep = rankme(z, opts);
  rep.checkpoint_digest = ckpt.digest();
  return rep;
}

// ------------------------------------------------------------------ sweep

namespace {

double probe_nll_mean(const Model& model, std::span<const double> params,
                      const std::vector<TokenizedSample>& probe) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : probe) {
    if (s.length() < 2) continue;
    sum += model.forward_nll(params, s);
    ++n;
  }
  if (n == 0) fail("probe set has no scoreable samples");
  return sum / static_cast<double>(n);
}

std::vector<std::string> source_ids(const std::vector<Corpus>& corpora) {
  std::vector<std::string> out;
  for (const auto& c : corpora) out.push_back(c.source_id);
  return out;
}

}  // namespace

LrSweepResult lr_sweep_correlation(const std::vector<double>& learning_rates,
                                   const std::vector<Corpus>& pretrain,
                                   const std::vector<Corpus>& midtrain,
                                   const std::vector<TokenizedSample>& probe,
                                   const LrSweepSpec& spec) {
  if (learning_rates.size() < 3)
    fail("lr sweep: need at least 3 learning rates");

  auto pre_mix = MixtureSpec::uniform(source_ids(pretrain), spec.token_budget,
                                      mix64(spec.seed, 1));
  auto mid_mix = MixtureSpec::uniform(source_ids(midtrain), spec.token_budget,
                                      mix64(spec.seed, 2));
  auto pre_stream = draw_stream(pretrain, pre_mix, {});
  auto mid_stream = draw_stream(midtrain, mid_mix, {});
  auto init = init_checkpoint(spec.model, mix64(spec.seed, 3));
  Model model(spec.model);

  LrSweepResult result;
  for (double lr : learning_rates) {
    LrSweepRow row;
    row.lr = lr;
    try {
      OptimState optim = spec.optim;
      optim.schedule.peak_lr = lr;
      optim.schedule.total_steps = 0;
      TrainOptions topts;
      topts.steps = spec.pretrain_steps;
      topts.batch_size = spec.batch_size;
      auto pre = train(init, pre_stream, optim, topts);
      row.rankme_after_pretrain =
          rankme_checkpoint(pre.back(), probe, spec.rankme).score;

      OptimState mid_optim = spec.optim;
      mid_optim.schedule.peak_lr = lr;
      mid_optim.schedule.total_steps = 0;
      TrainOptions mid_topts;
      mid_topts.steps = spec.midtrain_steps;
      mid_topts.batch_size = spec.batch_size;
      auto mid = train(pre.back(), mid_stream, mid_optim, mid_topts);
      row.probe_nll_after_midtrain =
          probe_nll_mean(model, mid.back().params, probe);
      if (!std::isfinite(row.probe_nll_after_midtrain))
        fail("non-finite probe loss");
    } catch (const ForgeError& e) {
      row.diverged = true;
      row.note = e.what();
    }
    result.rows.push_back(std::move(row));
  }

  std::vector<double> ranks_x, ranks_y;
  for (const auto& row : result.rows)
    if (!row.diverged) {
      ranks_x.push_back(row.rankme_after_pretrain);
      ranks_y.push_back(-row.probe_nll_after_midtrain);
    }
  result.spearman = ranks_x.size() >= 2 ? spearman(ranks_x, ranks_y) : 0.0;
  return result;
}

// ---------------------------------------------------------------- tracker

std::vector<NllPoint> nll_tracker(
    const std::vector<std::pair<std::string, std::vector<ModelCheckpoint>>>&
        stages,
    const std::map<std::string, std::vector<TokenizedSample>>& eval_sets) {
  std::vector<NllPoint> rows;
  for (const auto& [stage, ckpts] : stages) {
    std::vector<NllPoint> block;
    for (const auto& ckpt : ckpts) {
      Model model(ckpt.config);
      for (const auto& [name, set] : eval_sets)
        block.push_back(
            {stage, ckpt.step, name, probe_nll_mean(model, ckpt.params, set)});
    }
    std::sort(block.begin(), block.end(), [](const auto& a, const auto& b) {
      return std::tie(a.step, a.set_name) < std::tie(b.step, b.set_name);
    });
    rows.insert(rows.end(), block.begin(), block.end());
  }
  return rows;
}

void write_nll_csv(const std::string& path,
                   const std::vector<NllPoint>& rows) {
  std::ofstream out(path);
  if (!out) fail("cannot write nll csv: " + path);
  out.precision(17);
  out << "stage,step,set,nll\n";
  for (const auto& r : rows)
    out << r.stage << "," << r.step << "," << r.set_name << "," << r.nll
        << "\n";
}

void write_lr_sweep_csv(const std::string& path, const LrSweepResult& result) {
  std::ofstream out(path);
  if (!out) fail("cannot write lr sweep csv: " + path);
  out.precision(17);
  out << "lr,rankme_after_pretrain,probe_nll_after_midtrain,diverged,note\n";
  for (const auto& r : result.rows)
    out << r.lr << "," << r.rankme_after_pretrain << ","
        << r.probe_nll_after_midtrain << "," << (r.diverged ? 1 : 0) << ","
        << r.note << "\n";
  out << "# spearman," << result.spearman << "\n";
}

}  // namespace forge
