#include "invlab/attack.hpp"

#include <algorithm>
#include <cmath>

#include "invlab/defense.hpp"
#include "invlab/kernels.hpp"

namespace invlab {

const char* to_string(InitPolicy p) {
  return p == InitPolicy::RandomGaussian ? "random-gaussian" : "sample-from-class";
}

InitPolicy init_policy_from_string(const std::string& name) {
  if (name == "random-gaussian") return InitPolicy::RandomGaussian;
  if (name == "sample-from-class") return InitPolicy::SampleFromClass;
  throw ValidationError("unknown init policy '" + name + "'");
}

void InversionConfig::validate() const {
  if (steps < 0) throw ValidationError("inversion config: steps must be >= 0");
  if (prior_weight < 0.0) throw ValidationError("inversion config: prior weight must be >= 0");
  if (steps > 0 && !(lr > 0.0)) throw ValidationError("inversion config: lr must be positive");
}

void AdvConfig::validate() const {
  if (epsilon < 0.0) throw ValidationError("adv config: epsilon must be >= 0");
  if (steps > 0 && !(alpha > 0.0)) throw ValidationError("adv config: alpha must be positive");
  if (steps < 0) throw ValidationError("adv config: steps must be >= 0");
}

namespace {

// Attacks must not touch model parameter gradients; the guard drops
// requires_grad for the duration so backward stops at the inputs.
class ParamFreezeGuard {
 public:
  explicit ParamFreezeGuard(const ClassifierModel& model) : params_(model.params()) {
    saved_.reserve(params_.size());
    for (const auto& p : params_) {
      saved_.push_back(p->requires_grad);
      p->requires_grad = false;
    }
  }
  ~ParamFreezeGuard() {
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->requires_grad = saved_[i];
  }

 private:
  std::vector<TensorPtr> params_;
  std::vector<bool> saved_;
};

std::vector<double> initial_point(const ClassifierModel& model, const InversionConfig& cfg,
                                  const LabeledDataset* init_pool, Rng& rng) {
  const int d = model.input_dim();
  if (cfg.init == InitPolicy::RandomGaussian) {
    std::vector<double> x(d);
    for (double& v : x) v = rng.normal();
    return x;
  }
  if (init_pool == nullptr) {
    throw ContractError("invert: sample-from-class init needs a dataset");
  }
  std::vector<int> candidates;
  for (int i = 0; i < init_pool->size(); ++i) {
    if (init_pool->labels[i] == cfg.init_class) candidates.push_back(i);
  }
  if (candidates.empty()) {
    throw ContractError("invert: no samples of class " + std::to_string(cfg.init_class) +
                        " to start from");
  }
  const int pick = candidates[static_cast<std::size_t>(rng.below(candidates.size()))];
  return init_pool->row_copy(pick);
}

int argmax_row(const double* row, int n) {
  return static_cast<int>(std::max_element(row, row + n) - row);
}

}  // namespace

AttackResult invert(const ClassifierModel& model, const InversionConfig& cfg,
                    const LabeledDataset* init_pool,
                    const std::function<void(int, const std::vector<double>&)>& on_step) {
  cfg.validate();
  if (cfg.target_class < 0 || cfg.target_class >= model.classes()) {
    throw ContractError("invert: target class " + std::to_string(cfg.target_class) +
                        " out of range [0, " + std::to_string(model.classes()) + ")");
  }
  ParamFreezeGuard freeze(model);
  Rng rng(derive_seed(cfg.seed, "invert-init"));

  AttackResult result;
  result.target_class = cfg.target_class;
  result.seed = cfg.seed;
  result.init = initial_point(model, cfg, init_pool, rng);
  result.recon = result.init;
  result.confidence_trace.reserve(cfg.steps);
  result.grad_norm_trace.reserve(cfg.steps);

  const int d = model.input_dim();
  auto x0 = make_leaf({1, d}, result.init);
  auto x = make_leaf({1, d}, result.recon, true);
  std::vector<double> velocity(static_cast<std::size_t>(d), 0.0);

  double last_loss = 0.0;
  for (int step = 0; step < cfg.steps; ++step) {
    Tape tape;
    x->zero_grad();
    auto logprobs = model.logprobs(tape, x);
    auto target_lp = tape.gather_labels(logprobs, {cfg.target_class});
    TensorPtr loss = tape.scale(tape.sum(target_lp), -1.0);
    if (cfg.prior == PriorKind::L2ToInit && cfg.prior_weight > 0.0) {
      auto diff = tape.sub(x, x0);
      loss = tape.add(loss, tape.scale(tape.frob_inner(diff, diff), cfg.prior_weight));
    }
    last_loss = loss->values[0];
    if (!std::isfinite(last_loss)) {
      throw AttackError("invert: non-finite loss at step " + std::to_string(step));
    }

    result.confidence_trace.push_back(std::exp(target_lp->values[0]));
    if (on_step) on_step(step, x->values);

    tape.backward(loss);
    const double gnorm =
        std::sqrt(kernels().dot(d, x->grad.data(), x->grad.data()));
    result.grad_norm_trace.push_back(gnorm);

    if (cfg.momentum > 0.0) {
      for (int i = 0; i < d; ++i) {
        velocity[i] = cfg.momentum * velocity[i] + x->grad[i];
        x->values[i] -= cfg.lr * velocity[i];
      }
    } else {
      kernels().axpy(d, -cfg.lr, x->grad.data(), x->values.data());
    }
    if (cfg.clamp_unit_box) {
      for (int i = 0; i < d; ++i) x->values[i] = std::clamp(x->values[i], 0.0, 1.0);
    }
  }

  result.recon = x->values;
  if (cfg.steps > 0) {
    result.final_loss = last_loss;
  } else {
    // evaluate once so final_loss is meaningful even without steps
    Tape tape;
    auto logprobs = model.logprobs(tape, x);
    result.final_loss = -logprobs->at(0, cfg.target_class);
  }
  return result;
}

std::vector<AttackResult> invert_batch(const ClassifierModel& model,
                                       const std::vector<int>& classes, int per_class,
                                       const InversionConfig& cfg,
                                       const LabeledDataset* init_pool) {
  if (per_class < 1) throw ContractError("invert_batch: per_class must be >= 1");
  std::vector<AttackResult> results;
  results.reserve(classes.size() * static_cast<std::size_t>(per_class));
  for (int c : classes) {
    if (c < 0 || c >= model.classes()) {
      throw ContractError("invert_batch: class " + std::to_string(c) + " out of range");
    }
    for (int i = 0; i < per_class; ++i) {
      InversionConfig run = cfg;
      run.target_class = c;
      run.seed = derive_seed(cfg.seed, "invert-batch:" + std::to_string(c), i);
      results.push_back(invert(model, run, init_pool));
    }
  }
  return results;
}

void attach_nn_distances(std::vector<AttackResult>& results, const LabeledDataset& private_train) {
  const int d = private_train.dim();
  for (auto& r : results) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < private_train.size(); ++i) {
      if (private_train.labels[i] != r.target_class) continue;
      const double* row = private_train.row(i);
      double dist = 0.0;
      for (int k = 0; k < d; ++k) {
        const double diff = r.recon[k] - row[k];
        dist += diff * diff;
      }
      best = std::min(best, dist);
    }
    if (std::isfinite(best)) r.nn_distance = std::sqrt(best);
  }
}

namespace {

// Shared signed-gradient machinery for FGSM / PGD / BIM.
std::vector<double> input_gradient(const ClassifierModel& model, const std::vector<double>& x,
                                   const std::vector<int>& labels, int batch) {
  ParamFreezeGuard freeze(model);
  Tape tape;
  auto input = make_leaf({batch, model.input_dim()}, x, true);
  auto logprobs = model.logprobs(tape, input);
  auto loss = ce_loss(tape, logprobs, labels);
  tape.backward(loss);
  return input->grad;
}

std::vector<int> shifted_targets(const std::vector<int>& y, int classes) {
  std::vector<int> t(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) t[i] = (y[i] + 1) % classes;
  return t;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::vector<double> fgsm(const ClassifierModel& model, const std::vector<double>& x,
                         const std::vector<int>& y, int batch, const AdvConfig& cfg) {
  cfg.validate();
  const auto labels = cfg.targeted ? shifted_targets(y, model.classes()) : y;
  const auto grad = input_gradient(model, x, labels, batch);
  const double step = cfg.targeted ? -cfg.epsilon : cfg.epsilon;
  std::vector<double> adv(x);
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += step * sign(grad[i]);
  return adv;
}

std::vector<double> pgd(const ClassifierModel& model, const std::vector<double>& x,
                        const std::vector<int>& y, int batch, const AdvConfig& cfg) {
  cfg.validate();
  const auto labels = cfg.targeted ? shifted_targets(y, model.classes()) : y;
  const std::size_t n = x.size();
  std::vector<double> lo(n), hi(n);
  for (std::size_t i = 0; i < n; ++i) {
    lo[i] = x[i] - cfg.epsilon;
    hi[i] = x[i] + cfg.epsilon;
  }

  std::vector<double> adv(x);
  if (cfg.random_start && cfg.epsilon > 0.0) {
    Rng rng(derive_seed(cfg.seed, "pgd-start"));
    for (std::size_t i = 0; i < n; ++i) adv[i] += rng.uniform(-cfg.epsilon, cfg.epsilon);
  }
  const double step = cfg.targeted ? -cfg.alpha : cfg.alpha;
  for (int it = 0; it < cfg.steps; ++it) {
    const auto grad = input_gradient(model, adv, labels, batch);
    for (std::size_t i = 0; i < n; ++i) adv[i] += step * sign(grad[i]);
    kernels().clamp_box(static_cast<int>(n), adv.data(), lo.data(), hi.data());
  }
  return adv;
}

double attack_success_rate(const ClassifierModel& model, const std::vector<double>& adv,
                           const std::vector<int>& y, int batch, bool targeted) {
  if (batch < 1) throw ContractError("attack_success_rate: empty batch");
  const auto probs = model.predict_probs(adv, batch);
  const int classes = model.classes();
  int hits = 0;
  for (int i = 0; i < batch; ++i) {
    const int pred = argmax_row(probs.data() + static_cast<std::size_t>(i) * classes, classes);
    if (targeted) {
      if (pred == (y[i] + 1) % classes) ++hits;
    } else {
      if (pred != y[i]) ++hits;
    }
  }
  return static_cast<double>(hits) / batch;
}

}  // namespace invlab
