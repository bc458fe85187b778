#include "invlab/defense.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace invlab {

const char* to_string(DefenseKind k) {
  switch (k) {
    case DefenseKind::None: return "none";
    case DefenseKind::CaLoR: return "calor";
    case DefenseKind::LS: return "ls";
    case DefenseKind::MID: return "mid";
    case DefenseKind::BiDO: return "bido";
    case DefenseKind::TL: return "tl";
  }
  return "none";
}

DefenseKind defense_kind_from_string(const std::string& name) {
  if (name == "none") return DefenseKind::None;
  if (name == "calor") return DefenseKind::CaLoR;
  if (name == "ls") return DefenseKind::LS;
  if (name == "mid") return DefenseKind::MID;
  if (name == "bido") return DefenseKind::BiDO;
  if (name == "tl") return DefenseKind::TL;
  throw ValidationError("unknown defense '" + name + "'");
}

void CaConfig::validate() const {
  if (!(a > 0.0)) throw ValidationError("ca config: a must be positive, got " + std::to_string(a));
  if (!(b > 0.0)) throw ValidationError("ca config: b must be positive, got " + std::to_string(b));
  if (stage2_epochs < 0) throw ValidationError("ca config: stage2_epochs must be >= 0");
}

void DefenseConfig::validate() const {
  switch (kind) {
    case DefenseKind::CaLoR:
      ca.validate();
      if (rank < 1) throw ValidationError("defense config: rank must be >= 1");
      break;
    case DefenseKind::LS:
      if (ls_lambda <= -1.0 || ls_lambda >= 1.0) {
        throw ValidationError("defense config: ls lambda must lie in (-1, 1), got " +
                              std::to_string(ls_lambda));
      }
      break;
    case DefenseKind::MID:
      if (mid_lambda < 0.0) throw ValidationError("defense config: mid lambda must be >= 0");
      if (mid_width < 1) throw ValidationError("defense config: mid width must be >= 1");
      break;
    case DefenseKind::BiDO:
      if (bido_lambda_iz < 0.0 || bido_lambda_oz < 0.0) {
        throw ValidationError("defense config: bido weights must be >= 0");
      }
      break;
    case DefenseKind::TL:
      if (tl_freeze_ratio < 0.0 || tl_freeze_ratio > 1.0) {
        throw ValidationError("defense config: tl freeze ratio must lie in [0, 1]");
      }
      break;
    case DefenseKind::None:
      break;
  }
}

TensorPtr ce_loss(Tape& tape, const TensorPtr& logprobs, const std::vector<int>& labels) {
  return tape.scale(tape.mean(tape.gather_labels(logprobs, labels)), -1.0);
}

TensorPtr ce_all_ones(Tape& tape, const TensorPtr& logprobs) {
  const double batch = static_cast<double>(logprobs->rows());
  return tape.scale(tape.sum(logprobs), -1.0 / batch);
}

TensorPtr ls_loss(Tape& tape, const TensorPtr& logprobs, const std::vector<int>& labels,
                  double lambda) {
  if (lambda <= -1.0 || lambda >= 1.0) {
    throw ValidationError("ls_loss: lambda must lie in (-1, 1), got " + std::to_string(lambda));
  }
  const double classes = static_cast<double>(logprobs->cols());
  auto ce = ce_loss(tape, logprobs, labels);
  auto uniform_term = ce_all_ones(tape, logprobs);
  return tape.add(tape.scale(ce, 1.0 - lambda), tape.scale(uniform_term, lambda / classes));
}

TensorPtr ca_loss(Tape& tape, const TensorPtr& probs, const std::vector<int>& labels, double a,
                  double b, int* clamp_events) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw ContractError("ca_loss: a and b must be positive, got a=" + std::to_string(a) +
                        " b=" + std::to_string(b));
  }
  constexpr double kEps = 1e-12;
  auto conf = tape.gather_labels(probs, labels);
  if (clamp_events != nullptr) {
    for (double v : conf->values) {
      if (v < kEps) ++*clamp_events;
    }
  }
  auto log_conf = tape.log(tape.clamp_min(conf, kEps));
  // t^b log t written as exp(b log t) * log t, stable for t near 0
  auto pow_term = tape.exp(tape.scale(log_conf, b));
  return tape.scale(tape.mean(tape.mul(pow_term, log_conf)), a);
}

double ca_minimizer(double b) {
  if (!(b > 0.0)) throw ContractError("ca_minimizer: b must be positive, got " + std::to_string(b));
  return std::exp(-1.0 / b);
}

MidHeadOut mid_head(Tape& tape, const TensorPtr& features, const VibBottleneck& vib,
                    Rng* noise) {
  MidHeadOut out;
  out.mu = tape.add_rowvec(tape.matmul(features, vib.w_mu), vib.b_mu);
  out.sigma = tape.softplus(tape.add_rowvec(tape.matmul(features, vib.w_sigma), vib.b_sigma));
  if (noise != nullptr) {
    std::vector<double> eps(out.mu->numel());
    for (double& e : eps) e = noise->normal();
    auto eps_leaf = make_leaf(out.mu->shape, std::move(eps));
    out.latent = tape.add(out.mu, tape.mul(out.sigma, eps_leaf));
  } else {
    out.latent = out.mu;
  }
  return out;
}

TensorPtr mid_kl(Tape& tape, const TensorPtr& mu, const TensorPtr& sigma) {
  // -(1 + log sigma^2 - mu^2 - sigma^2) / 2, averaged over all entries
  auto sigma_sq = tape.mul(sigma, sigma);
  auto mu_sq = tape.mul(mu, mu);
  auto inner = tape.sub(tape.add_scalar(tape.log(sigma_sq), 1.0), tape.add(mu_sq, sigma_sq));
  return tape.scale(tape.mean(inner), -0.5);
}

namespace {

double median_pairwise_distance(const TensorPtr& x) {
  const int n = x->rows(), q = x->cols();
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    const double* xi = x->values.data() + static_cast<std::size_t>(i) * q;
    for (int j = i + 1; j < n; ++j) {
      const double* xj = x->values.data() + static_cast<std::size_t>(j) * q;
      double d = 0.0;
      for (int k = 0; k < q; ++k) {
        const double diff = xi[k] - xj[k];
        d += diff * diff;
      }
      dists.push_back(std::sqrt(d));
    }
  }
  if (dists.empty()) return 1.0;
  auto mid = dists.begin() + dists.size() / 2;
  std::nth_element(dists.begin(), mid, dists.end());
  const double med = *mid;
  return med > 0.0 ? med : 1.0;
}

TensorPtr centered_gaussian_gram(Tape& tape, const TensorPtr& x, double width) {
  const double w = width > 0.0 ? width : median_pairwise_distance(x);
  auto gram = tape.exp(tape.scale(tape.pairwise_sqdist(x), -1.0 / (2.0 * w * w)));
  return tape.double_center(gram);
}

}  // namespace

TensorPtr hsic(Tape& tape, const TensorPtr& x, const TensorPtr& z, double width) {
  const int n = x->rows();
  if (z->rows() != n) {
    throw ShapeError("hsic: sample counts differ, " + shape_to_string(x->shape) + " vs " +
                     shape_to_string(z->shape));
  }
  if (n < 4) throw ContractError("hsic: needs at least 4 samples, got " + std::to_string(n));
  auto kx = centered_gaussian_gram(tape, x, width);
  auto kz = centered_gaussian_gram(tape, z, width);
  const double denom = static_cast<double>(n - 1) * static_cast<double>(n - 1);
  return tape.scale(tape.frob_inner(kx, kz), 1.0 / denom);
}

TensorPtr bido_loss(Tape& tape, const TensorPtr& ce, const TensorPtr& x,
                    const std::vector<TensorPtr>& taps, const std::vector<int>& labels,
                    int classes, double lambda_iz, double lambda_oz, double width) {
  if (taps.empty()) throw ContractError("bido_loss: needs at least one tap");
  std::vector<double> onehot(labels.size() * static_cast<std::size_t>(classes), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw ContractError("bido_loss: label " + std::to_string(labels[i]) + " out of range");
    }
    onehot[i * classes + labels[i]] = 1.0;
  }
  auto y = make_leaf({static_cast<int>(labels.size()), classes}, std::move(onehot));

  TensorPtr total = ce;
  for (const auto& tap : taps) {
    if (lambda_iz != 0.0) {
      total = tape.add(total, tape.scale(hsic(tape, x, tap, width), lambda_iz));
    }
    if (lambda_oz != 0.0) {
      total = tape.sub(total, tape.scale(hsic(tape, tap, y, width), lambda_oz));
    }
  }
  return total;
}

void apply_tl_freeze(ClassifierModel& model, double ratio) { model.set_freeze_ratio(ratio); }

namespace {

TensorPtr batch_leaf(const LabeledDataset& ds, const std::vector<int>& idx) {
  std::vector<double> rows;
  rows.reserve(idx.size() * static_cast<std::size_t>(ds.dim()));
  for (int i : idx) {
    rows.insert(rows.end(), ds.row(i), ds.row(i) + ds.dim());
  }
  return make_leaf({static_cast<int>(idx.size()), ds.dim()}, std::move(rows));
}

std::vector<int> batch_labels(const LabeledDataset& ds, const std::vector<int>& idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (int i : idx) out.push_back(ds.labels[i]);
  return out;
}

struct EpochStats {
  double loss_sum = 0.0;
  int batches = 0;
};

}  // namespace

TrainReport train(ClassifierModel& model, const DatasetBundle& data, const DefenseConfig& defense,
                  const TrainOptions& opts) {
  defense.validate();
  if (opts.batch < 1) throw ValidationError("train: batch size must be >= 1");
  if (opts.epochs < 0) throw ValidationError("train: epochs must be >= 0");

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;

  if (defense.kind == DefenseKind::TL) {
    apply_tl_freeze(model, defense.tl_freeze_ratio);
  }

  Rng shuffle_rng(derive_seed(opts.seed, "train-shuffle"));
  Rng noise_rng(derive_seed(opts.seed, "train-vib-noise"));

  const LabeledDataset& train_set = data.train;
  std::vector<int> order(train_set.size());
  for (int i = 0; i < train_set.size(); ++i) order[i] = i;

  auto run_stage = [&](int epochs, double lr, bool ca_stage) {
    SgdOptimizer opt(model.trainable_params(), lr, opts.momentum);
    for (int epoch = 0; epoch < epochs; ++epoch) {
      shuffle_rng.shuffle(order);
      EpochStats stats;
      for (std::size_t begin = 0; begin < order.size();
           begin += static_cast<std::size_t>(opts.batch)) {
        const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(opts.batch));
        const std::vector<int> idx(order.begin() + begin, order.begin() + end);
        auto x = batch_leaf(train_set, idx);
        const auto labels = batch_labels(train_set, idx);

        Tape tape;
        Rng* noise = (defense.kind == DefenseKind::MID) ? &noise_rng : nullptr;
        auto trace = model.forward_trace(tape, x, noise);
        auto logprobs = tape.softmax_logprobs(trace.logits);

        TensorPtr loss;
        if (ca_stage) {
          auto probs = tape.exp(logprobs);
          auto ca = ca_loss(tape, probs, labels, defense.ca.a, defense.ca.b,
                            &report.ca_clamp_events);
          loss = defense.ca.keep_ce ? tape.add(ca, ce_loss(tape, logprobs, labels)) : ca;
        } else {
          switch (defense.kind) {
            case DefenseKind::LS:
              loss = ls_loss(tape, logprobs, labels, defense.ls_lambda);
              break;
            case DefenseKind::MID: {
              auto ce = ce_loss(tape, logprobs, labels);
              auto kl = mid_kl(tape, trace.mid_mu, trace.mid_sigma);
              loss = tape.add(ce, tape.scale(kl, defense.mid_lambda));
              break;
            }
            case DefenseKind::BiDO: {
              auto ce = ce_loss(tape, logprobs, labels);
              loss = bido_loss(tape, ce, x, trace.taps, labels, model.classes(),
                               defense.bido_lambda_iz, defense.bido_lambda_oz,
                               defense.bido_kernel_width);
              break;
            }
            default:
              loss = ce_loss(tape, logprobs, labels);
              break;
          }
        }

        if (!std::isfinite(loss->values[0])) {
          throw TrainingError("training diverged at epoch " + std::to_string(epoch) +
                                  " (loss is not finite)",
                              epoch);
        }
        tape.backward(loss);
        opt.step();
        stats.loss_sum += loss->values[0];
        ++stats.batches;
      }
      report.epoch_loss.push_back(stats.batches > 0 ? stats.loss_sum / stats.batches : 0.0);
    }
  };

  run_stage(opts.epochs, opts.lr, false);
  if (defense.kind == DefenseKind::CaLoR) {
    run_stage(defense.ca.stage2_epochs, defense.ca.stage2_lr, true);
  }

  report.train_accuracy = accuracy(model, data.train);
  report.test_accuracy = accuracy(model, data.test);
  report.mean_train_confidence = mean_confidence(model, data.train);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

double accuracy(const ClassifierModel& model, const LabeledDataset& ds) {
  if (ds.size() == 0) throw ContractError("accuracy: empty dataset");
  const auto probs = model.predict_probs(ds.features, ds.size());
  const int classes = model.classes();
  int correct = 0;
  for (int i = 0; i < ds.size(); ++i) {
    const double* row = probs.data() + static_cast<std::size_t>(i) * classes;
    const int pred = static_cast<int>(std::max_element(row, row + classes) - row);
    if (pred == ds.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / ds.size();
}

double mean_confidence(const ClassifierModel& model, const LabeledDataset& ds) {
  if (ds.size() == 0) throw ContractError("mean_confidence: empty dataset");
  const auto probs = model.predict_probs(ds.features, ds.size());
  const int classes = model.classes();
  double total = 0.0;
  for (int i = 0; i < ds.size(); ++i) {
    total += probs[static_cast<std::size_t>(i) * classes + ds.labels[i]];
  }
  return total / ds.size();
}

}  // namespace invlab
