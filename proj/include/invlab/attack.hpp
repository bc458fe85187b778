#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "invlab/data.hpp"
#include "invlab/model.hpp"

namespace invlab {

enum class InitPolicy { RandomGaussian, SampleFromClass };
enum class PriorKind { None, L2ToInit };

const char* to_string(InitPolicy p);
InitPolicy init_policy_from_string(const std::string& name);

struct InversionConfig {
  int target_class = 2;
  int steps = 2500;
  double lr = 0.05;
  double momentum = 0.0;
  InitPolicy init = InitPolicy::SampleFromClass;
  int init_class = 1;          // SampleFromClass only
  PriorKind prior = PriorKind::None;
  double prior_weight = 0.0;   // lambda
  // Keep iterates inside [0,1]^d; used for image-like data whose domain is
  // the unit box. The recorded gradient is the raw pre-projection gradient.
  bool clamp_unit_box = false;
  std::uint64_t seed = 1;

  void validate() const;
};

struct AttackResult {
  std::vector<double> recon;             // final iterate
  std::vector<double> init;              // starting point echo
  std::vector<double> confidence_trace;  // target-class probability per step
  std::vector<double> grad_norm_trace;   // L2 norm of dloss/dinput per step
  double final_loss = 0.0;
  int target_class = -1;
  std::uint64_t seed = 0;
  std::optional<double> nn_distance;     // input-space L2 to nearest private sample
};

/// Gradient-descent inversion of the input against a frozen model: minimizes
/// -log p_target(x) (+ lambda * ||x - x0||^2 when the prior is enabled).
/// init_pool supplies samples for the SampleFromClass policy. on_step, when
/// set, observes every iterate before it is updated.
AttackResult invert(const ClassifierModel& model, const InversionConfig& cfg,
                    const LabeledDataset* init_pool = nullptr,
                    const std::function<void(int, const std::vector<double>&)>& on_step = {});

/// per_class independent inversions for every listed class; the run seed of
/// class c, repeat i is derived from (cfg.seed, c, i).
std::vector<AttackResult> invert_batch(const ClassifierModel& model,
                                       const std::vector<int>& classes, int per_class,
                                       const InversionConfig& cfg,
                                       const LabeledDataset* init_pool = nullptr);

/// Fill nn_distance on each result: L2 to the nearest private sample of the
/// result's target class.
void attach_nn_distances(std::vector<AttackResult>& results, const LabeledDataset& private_train);

struct AdvConfig {
  double epsilon = 0.1;
  double alpha = 0.025;
  int steps = 10;
  bool random_start = true;
  bool targeted = false;
  std::uint64_t seed = 1;

  void validate() const;
};

/// One-step signed-gradient attack on a batch [n x d]. Untargeted ascends the
/// true-class loss; targeted descends toward (y + 1) mod N.
std::vector<double> fgsm(const ClassifierModel& model, const std::vector<double>& x,
                         const std::vector<int>& y, int batch, const AdvConfig& cfg);

/// Iterated signed-gradient attack projected into the epsilon-ball after each
/// step; random_start=false gives the basic iterative method.
std::vector<double> pgd(const ClassifierModel& model, const std::vector<double>& x,
                        const std::vector<int>& y, int batch, const AdvConfig& cfg);

/// Fraction of adversarial inputs classified differently from y (untargeted)
/// or exactly as (y + 1) mod N (targeted).
double attack_success_rate(const ClassifierModel& model, const std::vector<double>& adv,
                           const std::vector<int>& y, int batch, bool targeted);

}  // namespace invlab
