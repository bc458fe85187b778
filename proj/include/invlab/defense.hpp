#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "invlab/data.hpp"
#include "invlab/model.hpp"

namespace invlab {

enum class DefenseKind { None, CaLoR, LS, MID, BiDO, TL };

const char* to_string(DefenseKind k);
DefenseKind defense_kind_from_string(const std::string& name);

/// Confidence-adaptation fine-tuning stage.
struct CaConfig {
  double a = 1.0;
  double b = 8.0;
  int stage2_epochs = 200;
  double stage2_lr = 0.3;
  // Optional ablation switch: also keep the cross-entropy term in stage 2.
  // Off by default; mixing CE pulls confidence back toward 1.
  bool keep_ce = false;

  void validate() const;
};

struct DefenseConfig {
  DefenseKind kind = DefenseKind::None;

  CaConfig ca;            // CALoR
  int rank = 2;           // CALoR head rank (consumed at model-build time)

  double ls_lambda = -0.1;

  double mid_lambda = 0.01;
  int mid_width = 16;

  double bido_lambda_iz = 0.05;
  double bido_lambda_oz = 0.5;
  double bido_kernel_width = 0.0;  // <= 0 selects the median heuristic

  double tl_freeze_ratio = 0.5;

  void validate() const;
};

struct TrainOptions {
  int epochs = 300;
  double lr = 0.05;
  double momentum = 0.9;
  int batch = 32;
  std::uint64_t seed = 1;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double mean_train_confidence = 0.0;
  double wall_seconds = 0.0;
  int ca_clamp_events = 0;
};

// --- losses (all build on the caller's tape) --------------------------------

/// Mean negative log-probability of the true class.
TensorPtr ce_loss(Tape& tape, const TensorPtr& logprobs, const std::vector<int>& labels);

/// Mean over the batch of the summed negative log-probability of every class
/// (cross-entropy against the all-ones target).
TensorPtr ce_all_ones(Tape& tape, const TensorPtr& logprobs);

/// (1-lambda) * ce + (lambda/C) * ce_all_ones, C = class count.
TensorPtr ls_loss(Tape& tape, const TensorPtr& logprobs, const std::vector<int>& labels,
                  double lambda);

/// Mean of a * p_c^b * log(p_c) over the batch, p_c = true-class probability
/// clamped below at 1e-12. clamp_events counts clamped samples when non-null.
TensorPtr ca_loss(Tape& tape, const TensorPtr& probs, const std::vector<int>& labels, double a,
                  double b, int* clamp_events = nullptr);

/// The analytic minimizer exp(-1/b) of t -> a t^b log t on (0, 1].
double ca_minimizer(double b);

/// Gaussian sampling head for the MID defense: mu and softplus-sigma linear
/// maps of the features, latent = mu + sigma * eps. A null noise stream
/// selects the deterministic latent (= mu), used at evaluation time.
struct MidHeadOut {
  TensorPtr mu;
  TensorPtr sigma;
  TensorPtr latent;
};
MidHeadOut mid_head(Tape& tape, const TensorPtr& features, const VibBottleneck& vib,
                    Rng* noise = nullptr);

/// Mean over entries of -(1 + log sigma^2 - mu^2 - sigma^2) / 2.
TensorPtr mid_kl(Tape& tape, const TensorPtr& mu, const TensorPtr& sigma);

/// Biased HSIC estimator trace(K H L H) / (n-1)^2 with Gaussian kernels.
/// width <= 0 selects the median pairwise distance of each input separately.
TensorPtr hsic(Tape& tape, const TensorPtr& x, const TensorPtr& z, double width);

/// ce + lambda_iz * sum_i hsic(x, z_i) - lambda_oz * sum_i hsic(z_i, onehot).
TensorPtr bido_loss(Tape& tape, const TensorPtr& ce, const TensorPtr& x,
                    const std::vector<TensorPtr>& taps, const std::vector<int>& labels,
                    int classes, double lambda_iz, double lambda_oz, double width);

/// Exclude the first floor(ratio * L) encoder layers from optimizer updates.
void apply_tl_freeze(ClassifierModel& model, double ratio);

// --- training ----------------------------------------------------------------

/// Single-stage training with the configured defense loss; CALoR adds the
/// confidence-adaptation fine-tuning stage after the cross-entropy stage.
TrainReport train(ClassifierModel& model, const DatasetBundle& data, const DefenseConfig& defense,
                  const TrainOptions& opts);

// --- evaluation helpers -------------------------------------------------------

double accuracy(const ClassifierModel& model, const LabeledDataset& ds);
double mean_confidence(const ClassifierModel& model, const LabeledDataset& ds);

}  // namespace invlab
