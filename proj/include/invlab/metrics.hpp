#pragma once

#include <optional>
#include <string>
#include <vector>

#include "invlab/attack.hpp"
#include "invlab/defense.hpp"
#include "invlab/model.hpp"

namespace invlab {

/// Independently trained scorer. Never shares an init seed with any model it
/// evaluates; frozen after construction.
struct EvalModel {
  ClassifierModel model;
  std::uint64_t init_seed = 0;
  double test_accuracy = 0.0;
};

EvalModel make_eval_model(const DatasetBundle& data, ModelConfig cfg, const TrainOptions& opts);

/// One table row per defended/attacked variant.
struct MetricRow {
  std::string variant;
  double test_accuracy = 0.0;
  double acc_at_1 = 0.0;
  double acc_at_k = 0.0;
  int k = 1;  // 5, or ceil(N/2) when N < 6
  double delta_eval = 0.0;
  double mean_confidence = 0.0;
  double terminal_grad_norm = 0.0;
  std::optional<double> kes;
};

/// The k used for "top-k" rows: 5, or ceil(N/2) for small class counts.
int topk_k_for(int classes);

/// Fraction of reconstructions whose target class lands in the eval model's
/// top-k predictions. recons is row-major [count x d].
double topk_accuracy(const EvalModel& eval, const std::vector<double>& recons,
                     const std::vector<int>& targets, int count, int k);

/// Mean over reconstructions of the L2 distance, in the eval model's
/// penultimate feature space, to the nearest private training sample.
double feature_distance(const EvalModel& eval, const std::vector<double>& recons, int count,
                        const LabeledDataset& private_train);

/// Trailing moving average (partial windows at the head averaged over the
/// available entries), then normalized by the first smoothed value.
std::vector<double> smooth_normalize_trace(const std::vector<double>& trace, int window);

/// Knowledge extraction score: train a fresh surrogate on (recons, targets),
/// report its accuracy on the private train split restricted to the attacked
/// classes. Every attacked class must have at least one reconstruction.
double kes(const std::vector<double>& recons, const std::vector<int>& targets, int count,
           const LabeledDataset& private_train, const std::vector<int>& attacked_classes,
           const ModelConfig& surrogate_cfg, const TrainOptions& surrogate_opts,
           std::uint64_t seed);

struct AeEvalResult {
  double mse = 0.0;
  double reclass_accuracy = 0.0;
};

/// Reconstruction MSE on the test set plus eval-model accuracy on the
/// reconstructed samples against the true labels.
AeEvalResult ae_eval(const AutoencoderModel& ae, const LabeledDataset& test,
                     const EvalModel& eval);

/// Spearman rank correlation (average ranks on ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace invlab
