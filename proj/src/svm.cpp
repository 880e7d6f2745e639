#include <algorithm>
#include <cmath>
#include <limits>

#include "noc/rng.hpp"
#include "noc/train.hpp"

namespace noc {

double SvmHead::decision(std::size_t category, const Tensor& feature) const {
  const auto& w = weights.at(category);
  if (!present[category]) throw std::invalid_argument("SVM head for category " + std::to_string(category) + " was omitted");
  if (feature.size() != w.size())
    throw ShapeError("SvmHead: feature has " + std::to_string(feature.size()) + " entries, head expects " +
                     std::to_string(w.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) acc += w[i] * feature[i];
  return acc * feature_scale + bias[category];
}

double svm_primal_objective(const std::vector<double>& w, double b, const std::vector<std::vector<double>>& x,
                            const std::vector<int>& y, double C) {
  double reg = b * b;
  for (double v : w) reg += v * v;
  double hinge = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double f = b;
    for (std::size_t j = 0; j < w.size(); ++j) f += w[j] * x[i][j];
    hinge += std::max(0.0, 1.0 - y[i] * f);
  }
  return 0.5 * reg + C * hinge;
}

SvmHead train_svm(const std::vector<Tensor>& features, const std::vector<std::size_t>& labels,
                  std::size_t n_categories, const SvmConfig& config, SvmTrace* trace) {
  if (features.size() != labels.size()) throw std::invalid_argument("train_svm: features and labels differ in length");
  if (features.empty()) throw std::invalid_argument("train_svm: no training samples");
  if (!(config.C > 0)) throw std::invalid_argument("train_svm: C must be positive");
  const std::size_t dim = features[0].size();
  for (const auto& f : features)
    if (f.size() != dim) throw ShapeError("train_svm: features differ in length");

  SvmHead head;
  head.C = config.C;
  head.weights.assign(n_categories, {});
  head.bias.assign(n_categories, 0.0);
  head.present.assign(n_categories, false);
  if (trace) trace->dual_objective.assign(n_categories, {});

  if (config.target_norm > 0) {
    double norm_sum = 0.0;
    for (const auto& f : features) {
      double s = 0.0;
      for (float v : f.data()) s += static_cast<double>(v) * v;
      norm_sum += std::sqrt(s);
    }
    const double mean_norm = norm_sum / static_cast<double>(features.size());
    if (mean_norm > 0) head.feature_scale = config.target_norm / mean_norm;
  }

  // Augmented, scaled design matrix (last column = 1 for the bias).
  const std::size_t n = features.size();
  const std::size_t d1 = dim + 1;
  std::vector<double> x(n * d1);
  std::vector<double> qdiag(n);
  for (std::size_t i = 0; i < n; ++i) {
    double sq = 1.0;
    for (std::size_t j = 0; j < dim; ++j) {
      const double v = features[i][j] * head.feature_scale;
      x[i * d1 + j] = v;
      sq += v * v;
    }
    x[i * d1 + dim] = 1.0;
    qdiag[i] = sq;
  }

  for (std::size_t c = 0; c < n_categories; ++c) {
    std::vector<int> y(n);
    std::size_t npos = 0;
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = labels[i] == c ? 1 : -1;
      npos += labels[i] == c;
    }
    if (npos == 0 || npos == n) {
      if (trace)
        trace->warnings.push_back("category " + std::to_string(c) + ": no " + (npos == 0 ? "positives" : "negatives") +
                                  ", SVM head omitted");
      continue;
    }
    std::vector<double> alpha(n, 0.0), w(d1, 0.0);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(derive_seed(config.seed, c));
    for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double pg_max = -std::numeric_limits<double>::infinity(), pg_min = std::numeric_limits<double>::infinity();
      for (const std::size_t i : order) {
        const double* xi = x.data() + i * d1;
        double dot = 0.0;
        for (std::size_t j = 0; j < d1; ++j) dot += w[j] * xi[j];
        const double g = y[i] * dot - 1.0;
        double pg = g;
        if (alpha[i] == 0.0)
          pg = std::min(g, 0.0);
        else if (alpha[i] == config.C)
          pg = std::max(g, 0.0);
        pg_max = std::max(pg_max, pg);
        pg_min = std::min(pg_min, pg);
        if (pg == 0.0) continue;
        const double next = std::clamp(alpha[i] - g / qdiag[i], 0.0, config.C);
        const double delta = (next - alpha[i]) * y[i];
        alpha[i] = next;
        for (std::size_t j = 0; j < d1; ++j) w[j] += delta * xi[j];
      }
      if (trace) {
        double half_ww = 0.0, asum = 0.0;
        for (double v : w) half_ww += v * v;
        for (double a : alpha) asum += a;
        trace->dual_objective[c].push_back(0.5 * half_ww - asum);
      }
      if (pg_max - pg_min < config.tolerance) break;
    }
    head.bias[c] = w[dim];
    w.resize(dim);
    head.weights[c] = std::move(w);
    head.present[c] = true;
  }
  return head;
}

}  // namespace noc
