#include "invlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace invlab {

EvalModel make_eval_model(const DatasetBundle& data, ModelConfig cfg, const TrainOptions& opts) {
  EvalModel eval;
  eval.init_seed = cfg.init_seed;
  eval.model = build_classifier(cfg);
  DefenseConfig none;
  TrainReport report = train(eval.model, data, none, opts);
  eval.test_accuracy = report.test_accuracy;
  return eval;
}

int topk_k_for(int classes) { return classes < 6 ? (classes + 1) / 2 : 5; }

double topk_accuracy(const EvalModel& eval, const std::vector<double>& recons,
                     const std::vector<int>& targets, int count, int k) {
  if (count < 1) throw ContractError("topk_accuracy: no reconstructions");
  const int classes = eval.model.classes();
  if (k < 1 || k > classes) {
    throw ContractError("topk_accuracy: k " + std::to_string(k) + " outside [1, " +
                        std::to_string(classes) + "]");
  }
  const auto probs = eval.model.predict_probs(recons, count);
  int hits = 0;
  std::vector<int> idx(classes);
  for (int i = 0; i < count; ++i) {
    const double* row = probs.data() + static_cast<std::size_t>(i) * classes;
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return row[a] > row[b]; });
    for (int j = 0; j < k; ++j) {
      if (idx[j] == targets[i]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / count;
}

namespace {

std::vector<double> penultimate_features(const ClassifierModel& model,
                                         const std::vector<double>& x, int batch) {
  Tape tape;
  auto input = make_leaf({batch, model.input_dim()}, x);
  return model.penultimate(tape, input)->values;
}

}  // namespace

double feature_distance(const EvalModel& eval, const std::vector<double>& recons, int count,
                        const LabeledDataset& private_train) {
  if (count < 1 || private_train.size() < 1) {
    throw ContractError("feature_distance: empty inputs");
  }
  const auto recon_feat = penultimate_features(eval.model, recons, count);
  const auto priv_feat =
      penultimate_features(eval.model, private_train.features, private_train.size());
  const int fd = static_cast<int>(recon_feat.size() / static_cast<std::size_t>(count));

  double total = 0.0;
  for (int i = 0; i < count; ++i) {
    const double* ri = recon_feat.data() + static_cast<std::size_t>(i) * fd;
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < private_train.size(); ++j) {
      const double* pj = priv_feat.data() + static_cast<std::size_t>(j) * fd;
      double d = 0.0;
      for (int kdx = 0; kdx < fd; ++kdx) {
        const double diff = ri[kdx] - pj[kdx];
        d += diff * diff;
      }
      best = std::min(best, d);
    }
    total += std::sqrt(best);
  }
  return total / count;
}

std::vector<double> smooth_normalize_trace(const std::vector<double>& trace, int window) {
  if (trace.empty()) throw ContractError("smooth_normalize_trace: empty trace");
  if (window < 1) throw ContractError("smooth_normalize_trace: window must be >= 1");
  std::vector<double> smoothed(trace.size());
  double running = 0.0;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    running += trace[i];
    if (i >= static_cast<std::size_t>(window)) running -= trace[i - window];
    const double denom = std::min<std::size_t>(i + 1, static_cast<std::size_t>(window));
    smoothed[i] = running / static_cast<double>(denom);
  }
  const double first = smoothed.front();
  if (first == 0.0) {
    throw NormalizationError("smooth_normalize_trace: first smoothed value is zero");
  }
  for (double& v : smoothed) v /= first;
  return smoothed;
}

double kes(const std::vector<double>& recons, const std::vector<int>& targets, int count,
           const LabeledDataset& private_train, const std::vector<int>& attacked_classes,
           const ModelConfig& surrogate_cfg, const TrainOptions& surrogate_opts,
           std::uint64_t seed) {
  if (count < 1) throw ContractError("kes: no reconstructions");
  for (int c : attacked_classes) {
    if (std::find(targets.begin(), targets.begin() + count, c) == targets.begin() + count) {
      throw ContractError("kes: no reconstruction for attacked class " + std::to_string(c));
    }
  }

  // Surrogate training set: the reconstructions labeled with their targets.
  DatasetBundle surrogate_data;
  surrogate_data.train.features = recons;
  surrogate_data.train.labels = targets;
  surrogate_data.train.split = "train";
  surrogate_data.train.seed = seed;
  surrogate_data.train.spec = private_train.spec;

  // Private train samples of the attacked classes form the evaluation set.
  surrogate_data.test.split = "test";
  surrogate_data.test.seed = seed;
  surrogate_data.test.spec = private_train.spec;
  for (int i = 0; i < private_train.size(); ++i) {
    if (std::find(attacked_classes.begin(), attacked_classes.end(), private_train.labels[i]) ==
        attacked_classes.end()) {
      continue;
    }
    surrogate_data.test.labels.push_back(private_train.labels[i]);
    surrogate_data.test.features.insert(surrogate_data.test.features.end(), private_train.row(i),
                                        private_train.row(i) + private_train.dim());
  }
  if (surrogate_data.test.labels.empty()) {
    throw ContractError("kes: private train split has no samples of the attacked classes");
  }

  ModelConfig cfg = surrogate_cfg;
  cfg.init_seed = derive_seed(seed, "kes-surrogate");
  ClassifierModel surrogate = build_classifier(cfg);
  TrainOptions opts = surrogate_opts;
  opts.seed = derive_seed(seed, "kes-train");
  DefenseConfig none;
  train(surrogate, surrogate_data, none, opts);
  return accuracy(surrogate, surrogate_data.test);
}

AeEvalResult ae_eval(const AutoencoderModel& ae, const LabeledDataset& test,
                     const EvalModel& eval) {
  if (test.size() < 1) throw ContractError("ae_eval: empty test set");
  Tape tape;
  auto x = make_leaf({test.size(), test.dim()}, test.features);
  auto recon = ae.forward(tape, x);

  double sq_sum = 0.0;
  for (std::size_t i = 0; i < recon->numel(); ++i) {
    const double diff = recon->values[i] - test.features[i];
    sq_sum += diff * diff;
  }
  AeEvalResult result;
  result.mse = sq_sum / static_cast<double>(recon->numel());

  const auto probs = eval.model.predict_probs(recon->values, test.size());
  const int classes = eval.model.classes();
  int correct = 0;
  for (int i = 0; i < test.size(); ++i) {
    const double* row = probs.data() + static_cast<std::size_t>(i) * classes;
    const int pred = static_cast<int>(std::max_element(row, row + classes) - row);
    if (pred == test.labels[i]) ++correct;
  }
  result.reclass_accuracy = static_cast<double>(correct) / test.size();
  return result;
}

namespace {
std::vector<double> ranks_of(const std::vector<double>& xs) {
  const std::size_t n = xs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return xs[a] < xs[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}
}  // namespace

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ContractError("spearman: need two equally sized series of length >= 2");
  }
  const auto ra = ranks_of(a);
  const auto rb = ranks_of(b);
  const double n = static_cast<double>(a.size());
  double mean = (n + 1.0) / 2.0;
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (ra[i] - mean) * (rb[i] - mean);
    da += (ra[i] - mean) * (ra[i] - mean);
    db += (rb[i] - mean) * (rb[i] - mean);
  }
  if (da == 0.0 || db == 0.0) return 0.0;
  return num / std::sqrt(da * db);
}

}  // namespace invlab
