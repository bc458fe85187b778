#include "invlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <thread>

#include "invlab/attack.hpp"

namespace invlab {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// config resolution
// ---------------------------------------------------------------------------

void deep_merge(json& base, const json& overlay) {
  if (!overlay.is_object() || !base.is_object()) {
    base = overlay;
    return;
  }
  for (auto it = overlay.begin(); it != overlay.end(); ++it) {
    if (base.contains(it.key()) && base[it.key()].is_object() && it.value().is_object()) {
      deep_merge(base[it.key()], it.value());
    } else {
      base[it.key()] = it.value();
    }
  }
}

json toy_dataset_defaults() {
  return {{"kind", "toy2d"}, {"classes", 3}, {"per_class", 50}, {"dim", 2}, {"sigma", 0.5}};
}

json synthimg_dataset_defaults() {
  return {{"kind", "synthimg"}, {"classes", 10}, {"per_class", 20}, {"dim", 256}, {"sigma", 0.1}};
}

json toy_model_defaults() {
  return {{"widths", json::array({20, 20})},
          {"activations", json::array()},
          {"head", "standard"},
          {"rank", 1},
          {"head_activation", "tanh"},
          {"init", "glorot"}};
}

json default_config(const std::string& name) {
  json cfg;
  cfg["experiment"] = name;
  cfg["seed"] = 1;
  cfg["out_dir"] = "";

  if (name == "toy2d-defense-grid") {
    cfg["repeats"] = 5;
    cfg["dataset"] = toy_dataset_defaults();
    cfg["model"] = toy_model_defaults();
    cfg["train"] = {{"epochs", 1000}, {"lr", 0.05}, {"momentum", 0.9}, {"batch", 32}};
    cfg["ca"] = {{"a", 1.0}, {"b", 8.0}, {"stage2_epochs", 200}, {"stage2_lr", 0.3},
                 {"keep_ce", false}};
    cfg["attack"] = {{"steps", 2500}, {"lr", 0.01},   {"momentum", 0.0},
                     {"init", "sample-from-class"},   {"init_class", -1},
                     {"target_class", -1},            {"per_class", 5},
                     {"prior", "none"},               {"prior_weight", 0.0},
                     {"clamp_unit_box", false}};
    cfg["eval_model"] = {{"widths", json::array({24, 24})}, {"epochs", 300}, {"lr", 0.05}};
    cfg["include_calor"] = false;
    cfg["kes"] = false;
    cfg["grid"] = false;
  } else if (name == "rank-sweep") {
    cfg["repeats"] = 3;
    cfg["dataset"] = synthimg_dataset_defaults();
    cfg["model"] = {{"widths", json::array({64, 32})}, {"activations", json::array()},
                    {"head", "lowrank"}, {"rank", 2}, {"head_activation", "tanh"},
                    {"init", "glorot"}};
    cfg["ranks"] = json::array({2, 4, 8, "full"});
    cfg["train"] = {{"epochs", 400}, {"lr", 0.005}, {"momentum", 0.9}, {"batch", 32}};
    cfg["attack"] = {{"steps", 1500}, {"lr", 0.01}, {"momentum", 0.0},
                     {"init", "random-gaussian"}, {"init_class", 0}, {"target_class", -1},
                     {"per_class", 2}, {"prior", "none"}, {"prior_weight", 0.0},
                     {"clamp_unit_box", true}};
    cfg["eval_model"] = {{"widths", json::array({64})}, {"epochs", 300}, {"lr", 0.005}};
  } else if (name == "activation-sweep") {
    cfg["repeats"] = 5;
    cfg["dataset"] = toy_dataset_defaults();
    cfg["model"] = toy_model_defaults();
    cfg["model"]["head"] = "lowrank";
    cfg["model"]["rank"] = 2;
    cfg["activations"] = json::array({"identity", "relu", "sigmoid", "tanh"});
    cfg["train"] = {{"epochs", 1000}, {"lr", 0.05}, {"momentum", 0.9}, {"batch", 32}};
    cfg["attack"] = {{"steps", 2500}, {"lr", 0.01}, {"momentum", 0.0},
                     {"init", "random-gaussian"}, {"init_class", 1}, {"target_class", 2},
                     {"per_class", 5}, {"prior", "none"}, {"prior_weight", 0.0},
                     {"clamp_unit_box", false}};
    cfg["eval_model"] = {{"widths", json::array({24, 24})}, {"epochs", 300}, {"lr", 0.05}};
  } else if (name == "confidence-sweep") {
    cfg["repeats"] = 1;
    cfg["dataset"] = synthimg_dataset_defaults();
    cfg["model"] = {{"widths", json::array({64, 32})}, {"activations", json::array()},
                    {"head", "standard"}, {"rank", 2}, {"head_activation", "tanh"},
                    {"init", "glorot"}};
    cfg["checkpoints"] = json::array({2, 5, 10, 25, 60, 150});
    cfg["train"] = {{"epochs", 150}, {"lr", 0.005}, {"momentum", 0.9}, {"batch", 32}};
    cfg["attack"] = {{"steps", 1500}, {"lr", 0.01}, {"momentum", 0.0},
                     {"init", "random-gaussian"}, {"init_class", 0}, {"target_class", -1},
                     {"per_class", 4}, {"prior", "none"}, {"prior_weight", 0.0},
                     {"clamp_unit_box", true}};
    cfg["eval_model"] = {{"widths", json::array({64})}, {"epochs", 300}, {"lr", 0.005}};
  } else if (name == "ae-rank-sweep") {
    cfg["repeats"] = 1;
    cfg["dataset"] = synthimg_dataset_defaults();
    cfg["dataset"]["per_class"] = 50;
    cfg["dataset"]["sigma"] = 0.2;
    cfg["ranks"] = json::array({2, 4, 8, 16, 32});
    cfg["ae"] = {{"hidden", 64}, {"epochs", 400}, {"lr", 0.05}, {"momentum", 0.9},
                 {"batch", 32}};
    cfg["eval_model"] = {{"widths", json::array({64})}, {"epochs", 300}, {"lr", 0.005}};
  } else if (name == "defense-compare") {
    cfg["repeats"] = 5;
    cfg["dataset"] = toy_dataset_defaults();
    cfg["model"] = toy_model_defaults();
    cfg["defenses"] = json::array({"none", "calor", "ls", "mid", "bido", "tl"});
    // toy-tuned strengths; ls trains on a shorter, gentler schedule because
    // the negative smoothing objective is unbounded below on a small MLP
    cfg["defense_params"] = {{"calor", {{"rank", 1}, {"head_activation", "tanh"}}},
                             {"ls", {{"lambda", -0.05},
                                     {"train", {{"epochs", 100}, {"lr", 0.005}}}}},
                             {"mid", {{"lambda", 0.01}, {"width", 16}}},
                             {"bido", {{"lambda_iz", 0.05}, {"lambda_oz", 0.5},
                                       {"kernel_width", 0.0}}},
                             {"tl", {{"freeze_ratio", 0.5}}}};
    cfg["ca"] = {{"a", 1.0}, {"b", 8.0}, {"stage2_epochs", 200}, {"stage2_lr", 0.3},
                 {"keep_ce", false}};
    cfg["train"] = {{"epochs", 1000}, {"lr", 0.05}, {"momentum", 0.9}, {"batch", 32}};
    cfg["attack"] = {{"steps", 2500}, {"lr", 0.01}, {"momentum", 0.0},
                     {"init", "sample-from-class"}, {"init_class", -1}, {"target_class", -1},
                     {"per_class", 5}, {"prior", "none"}, {"prior_weight", 0.0},
                     {"clamp_unit_box", false}};
    cfg["eval_model"] = {{"widths", json::array({24, 24})}, {"epochs", 300}, {"lr", 0.05}};
    cfg["kes"] = true;
    cfg["kes_surrogate"] = {{"widths", json::array({20, 20})}, {"epochs", 200}, {"lr", 0.05}};
  } else if (name == "adv-probe") {
    cfg["repeats"] = 5;
    cfg["dataset"] = toy_dataset_defaults();
    cfg["dataset"]["sigma"] = 1.2;
    cfg["dataset"]["per_class"] = 100;
    cfg["model"] = toy_model_defaults();
    cfg["train"] = {{"epochs", 400}, {"lr", 0.05}, {"momentum", 0.9}, {"batch", 32}};
    cfg["adv"] = {{"epsilon", 0.1}, {"alpha", 0.025}, {"steps", 10}, {"random_start", true}};
  } else if (name == "calibration") {
    cfg["repeats"] = 1;
    cfg["a"] = 1.0;
    cfg["b_values"] = json::array({1.0, 2.0, 4.0, 8.0});
    cfg["tolerance"] = 1e-9;
  } else {
    throw UsageError("unknown experiment '" + name + "'");
  }
  return cfg;
}

DatasetSpec dataset_from_json(const json& j, std::uint64_t seed) {
  DatasetSpec spec;
  spec.kind = dataset_kind_from_string(j.at("kind").get<std::string>());
  spec.classes = j.at("classes").get<int>();
  spec.samples_per_class = j.at("per_class").get<int>();
  spec.dim = j.at("dim").get<int>();
  spec.sigma = j.at("sigma").get<double>();
  spec.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : seed;
  return spec;
}

ModelConfig model_from_json(const json& j, int input_dim, int classes, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.input_dim = input_dim;
  cfg.encoder_widths = j.at("widths").get<std::vector<int>>();
  for (const auto& a : j.value("activations", json::array())) {
    cfg.encoder_acts.push_back(activation_from_string(a.get<std::string>()));
  }
  cfg.head = head_kind_from_string(j.value("head", "standard"));
  cfg.rank = j.value("rank", 1);
  cfg.head_activation = activation_from_string(j.value("head_activation", "tanh"));
  cfg.classes = classes;
  cfg.init_seed = seed;
  const auto init = j.value("init", "glorot");
  cfg.init = init == "identity" ? InitScheme::Identity
             : init == "zero" ? InitScheme::Zero : InitScheme::Glorot;
  return cfg;
}

TrainOptions train_from_json(const json& j, std::uint64_t seed) {
  TrainOptions opts;
  opts.epochs = j.at("epochs").get<int>();
  opts.lr = j.at("lr").get<double>();
  opts.momentum = j.value("momentum", 0.9);
  opts.batch = j.value("batch", 32);
  opts.seed = seed;
  return opts;
}

InversionConfig attack_from_json(const json& j, std::uint64_t seed) {
  InversionConfig cfg;
  cfg.steps = j.at("steps").get<int>();
  cfg.lr = j.at("lr").get<double>();
  cfg.momentum = j.value("momentum", 0.0);
  cfg.init = init_policy_from_string(j.value("init", "sample-from-class"));
  cfg.init_class = j.value("init_class", 1);
  cfg.target_class = j.value("target_class", 2);
  cfg.prior = j.value("prior", "none") == "l2-to-init" ? PriorKind::L2ToInit : PriorKind::None;
  cfg.prior_weight = j.value("prior_weight", 0.0);
  cfg.clamp_unit_box = j.value("clamp_unit_box", false);
  cfg.seed = seed;
  return cfg;
}

CaConfig ca_from_json(const json& j) {
  CaConfig ca;
  ca.a = j.value("a", 1.0);
  ca.b = j.value("b", 8.0);
  ca.stage2_epochs = j.value("stage2_epochs", 200);
  ca.stage2_lr = j.value("stage2_lr", 0.3);
  ca.keep_ce = j.value("keep_ce", false);
  return ca;
}

double median(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of empty set");
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

// ---------------------------------------------------------------------------
// shared sub-procedures
// ---------------------------------------------------------------------------

struct RepeatContext {
  DatasetBundle data;
  EvalModel eval;
};

RepeatContext make_repeat_context(const json& cfg, std::uint64_t rep_seed) {
  RepeatContext ctx;
  ctx.data = generate(dataset_from_json(cfg.at("dataset"), derive_seed(rep_seed, "data")));
  const auto& ej = cfg.at("eval_model");
  ModelConfig eval_cfg;
  eval_cfg.input_dim = ctx.data.train.dim();
  eval_cfg.encoder_widths = ej.at("widths").get<std::vector<int>>();
  eval_cfg.classes = ctx.data.train.classes();
  eval_cfg.init_seed = derive_seed(rep_seed, "eval-init");
  TrainOptions opts;
  opts.epochs = ej.at("epochs").get<int>();
  opts.lr = ej.value("lr", 0.05);
  opts.seed = derive_seed(rep_seed, "eval-train");
  ctx.eval = make_eval_model(ctx.data, eval_cfg, opts);
  return ctx;
}

struct AttackOutcome {
  std::vector<double> recons;        // row-major
  std::vector<int> targets;
  std::vector<double> distances;     // input-space nn distance per recon
  std::vector<double> mean_conf_trace;
  std::vector<double> mean_grad_trace;
};

// Attack either the configured single target class or every class; the init
// class for "sample-from-class" shifts to the target's neighbor when the
// config does not pin one.
AttackOutcome run_attacks(const ClassifierModel& model, const DatasetBundle& data,
                          const json& attack_json, std::uint64_t seed) {
  AttackOutcome out;
  InversionConfig base = attack_from_json(attack_json, seed);
  const int per_class = attack_json.value("per_class", 5);
  const int classes = model.classes();

  std::vector<int> targets;
  if (base.target_class < 0) {
    for (int c = 0; c < classes; ++c) targets.push_back(c);
  } else {
    targets.push_back(base.target_class);
  }

  std::vector<AttackResult> all;
  for (int c : targets) {
    InversionConfig run = base;
    run.target_class = c;
    if (attack_json.value("init_class", -1) < 0) run.init_class = (c + 1) % classes;
    run.seed = derive_seed(seed, "attack-class", static_cast<std::uint64_t>(c));
    auto rs = invert_batch(model, {c}, per_class, run, &data.train);
    for (auto& r : rs) all.push_back(std::move(r));
  }
  attach_nn_distances(all, data.train);

  const int steps = base.steps;
  out.mean_conf_trace.assign(steps, 0.0);
  out.mean_grad_trace.assign(steps, 0.0);
  for (const auto& r : all) {
    out.recons.insert(out.recons.end(), r.recon.begin(), r.recon.end());
    out.targets.push_back(r.target_class);
    out.distances.push_back(r.nn_distance.value_or(std::numeric_limits<double>::quiet_NaN()));
    for (int t = 0; t < steps; ++t) {
      out.mean_conf_trace[t] += r.confidence_trace[t] / all.size();
      out.mean_grad_trace[t] += r.grad_norm_trace[t] / all.size();
    }
  }
  return out;
}

// Terminal value of the window-20 smoothed, first-value-normalized trace.
// A trace whose leading value is exactly zero never moved at all; report 0.
double terminal_normalized(const std::vector<double>& trace) {
  if (trace.empty()) return 0.0;
  try {
    return smooth_normalize_trace(trace, 20).back();
  } catch (const NormalizationError&) {
    return 0.0;
  }
}

struct VariantSample {
  double test_acc = 0.0;
  double acc1 = 0.0;
  double acck = 0.0;
  double delta_eval = 0.0;
  double mean_conf = 0.0;
  double terminal_grad = 0.0;
  double median_distance = 0.0;
  double kes_score = 0.0;
  bool has_kes = false;
  std::vector<double> conf_trace;
  std::vector<double> grad_trace;
};

MetricRow aggregate_rows(const std::string& name, const std::vector<VariantSample>& samples,
                         int k) {
  auto collect = [&](auto getter) {
    std::vector<double> v;
    for (const auto& s : samples) v.push_back(getter(s));
    return median(v);
  };
  MetricRow row;
  row.variant = name;
  row.k = k;
  row.test_accuracy = collect([](const VariantSample& s) { return s.test_acc; });
  row.acc_at_1 = collect([](const VariantSample& s) { return s.acc1; });
  row.acc_at_k = collect([](const VariantSample& s) { return s.acck; });
  row.delta_eval = collect([](const VariantSample& s) { return s.delta_eval; });
  row.mean_confidence = collect([](const VariantSample& s) { return s.mean_conf; });
  row.terminal_grad_norm = collect([](const VariantSample& s) { return s.terminal_grad; });
  if (!samples.empty() && samples.front().has_kes) {
    row.kes = collect([](const VariantSample& s) { return s.kes_score; });
  }
  return row;
}

std::vector<double> mean_traces(const std::vector<VariantSample>& samples,
                                bool grad) {
  if (samples.empty() || samples.front().conf_trace.empty()) return {};
  const std::size_t n = grad ? samples.front().grad_trace.size()
                             : samples.front().conf_trace.size();
  std::vector<double> out(n, 0.0);
  for (const auto& s : samples) {
    const auto& src = grad ? s.grad_trace : s.conf_trace;
    for (std::size_t t = 0; t < n; ++t) out[t] += src[t] / samples.size();
  }
  return out;
}

double run_kes(const json& cfg, const RepeatContext& ctx, const AttackOutcome& attack,
               std::uint64_t seed) {
  const auto& sj = cfg.at("kes_surrogate");
  ModelConfig surrogate;
  surrogate.input_dim = ctx.data.train.dim();
  surrogate.encoder_widths = sj.at("widths").get<std::vector<int>>();
  surrogate.classes = ctx.data.train.classes();
  TrainOptions opts;
  opts.epochs = sj.at("epochs").get<int>();
  opts.lr = sj.value("lr", 0.05);
  std::vector<int> attacked(attack.targets.begin(), attack.targets.end());
  std::sort(attacked.begin(), attacked.end());
  attacked.erase(std::unique(attacked.begin(), attacked.end()), attacked.end());
  return kes(attack.recons, attack.targets, static_cast<int>(attack.targets.size()),
             ctx.data.train, attacked, surrogate, opts, derive_seed(seed, "kes"));
}

VariantSample measure_variant(const json& cfg, const RepeatContext& ctx, ClassifierModel& model,
                              const TrainReport& report, std::uint64_t seed, bool want_kes) {
  VariantSample sample;
  sample.test_acc = report.test_accuracy;
  sample.mean_conf = report.mean_train_confidence;

  const auto attack = run_attacks(model, ctx.data, cfg.at("attack"), seed);
  const int n = static_cast<int>(attack.targets.size());
  const int k = topk_k_for(ctx.data.train.classes());
  sample.acc1 = topk_accuracy(ctx.eval, attack.recons, attack.targets, n, 1);
  sample.acck = topk_accuracy(ctx.eval, attack.recons, attack.targets, n, k);
  sample.delta_eval = feature_distance(ctx.eval, attack.recons, n, ctx.data.train);
  sample.terminal_grad = terminal_normalized(attack.mean_grad_trace);
  sample.median_distance = median(attack.distances);
  sample.conf_trace = attack.mean_conf_trace;
  sample.grad_trace = attack.mean_grad_trace;
  if (want_kes) {
    sample.kes_score = run_kes(cfg, ctx, attack, seed);
    sample.has_kes = true;
  }
  return sample;
}

// ---------------------------------------------------------------------------
// experiment runners
// ---------------------------------------------------------------------------

using VariantTask = std::function<VariantResult()>;

std::vector<VariantResult> run_tasks(std::vector<VariantTask> tasks, int jobs) {
  std::vector<VariantResult> results(tasks.size());
  if (jobs <= 1 || tasks.size() <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) results[i] = tasks[i]();
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      try {
        results[i] = tasks[i]();
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::min<int>(jobs, static_cast<int>(tasks.size()));
  pool.reserve(n);
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return results;
}

struct GridVariant {
  std::string name;
  HeadKind head;
  Activation head_activation;      // kappa for low-rank heads
  bool tanh_last_encoder = false;  // tanh-only variant
  bool with_ca = false;
};

json model_json_for_grid(const json& base_model, const GridVariant& v) {
  json m = base_model;
  m["head"] = v.head == HeadKind::Standard ? "standard" : "lowrank";
  m["head_activation"] = to_string(v.head_activation);
  if (v.tanh_last_encoder) {
    const auto widths = base_model.at("widths").get<std::vector<int>>();
    json acts = json::array();
    for (std::size_t i = 0; i < widths.size(); ++i) {
      acts.push_back(i + 1 == widths.size() ? "tanh" : "relu");
    }
    m["activations"] = acts;
  }
  return m;
}

std::vector<VariantResult> run_toy_grid(const json& cfg, int jobs) {
  std::vector<GridVariant> variants = {
      {"no-defense", HeadKind::Standard, Activation::Identity, false, false},
      {"tanh-only", HeadKind::Standard, Activation::Identity, true, false},
      {"low-rank", HeadKind::LowRank, Activation::Identity, false, false},
      {"low-rank+tanh", HeadKind::LowRank, Activation::Tanh, false, false},
  };
  if (cfg.value("include_calor", false)) {
    variants.push_back({"calor", HeadKind::LowRank, Activation::Tanh, false, true});
  }

  const std::uint64_t base_seed = cfg.at("seed").get<std::uint64_t>();
  const int repeats = cfg.at("repeats").get<int>();
  const bool want_kes = cfg.value("kes", false);

  std::vector<VariantTask> tasks;
  for (const auto& v : variants) {
    tasks.push_back([&cfg, v, base_seed, repeats, want_kes] {
      std::vector<VariantSample> samples;
      std::vector<double> per_seed_distances;
      for (int rep = 0; rep < repeats; ++rep) {
        const std::uint64_t rep_seed = derive_seed(base_seed, "rep", rep);
        auto ctx = make_repeat_context(cfg, rep_seed);
        const std::uint64_t vseed = derive_seed(base_seed, v.name, rep);

        json mj = model_json_for_grid(cfg.at("model"), v);
        auto mc = model_from_json(mj, ctx.data.train.dim(), ctx.data.train.classes(),
                                  derive_seed(vseed, "model-init"));
        auto model = build_classifier(mc);
        DefenseConfig defense;
        if (v.with_ca) {
          defense.kind = DefenseKind::CaLoR;
          defense.ca = ca_from_json(cfg.at("ca"));
          defense.rank = mc.rank;
        }
        auto report = train(model, ctx.data, defense, train_from_json(cfg.at("train"),
                                                                      derive_seed(vseed, "train")));
        auto sample = measure_variant(cfg, ctx, model, report, vseed, want_kes);
        per_seed_distances.push_back(sample.median_distance);
        samples.push_back(std::move(sample));
      }
      VariantResult result;
      result.name = v.name;
      result.row = aggregate_rows(v.name, samples, topk_k_for(cfg.at("dataset").at("classes")));
      json seeds = json::array();
      for (int rep = 0; rep < repeats; ++rep) seeds.push_back(derive_seed(base_seed, v.name, rep));
      result.extra["variant_seeds"] = std::move(seeds);
      result.extra["median_distance"] = median(per_seed_distances);
      result.extra["per_seed_median_distance"] = per_seed_distances;
      result.confidence_trace = mean_traces(samples, false);
      result.grad_norm_trace = mean_traces(samples, true);
      return result;
    });
  }
  auto results = run_tasks(std::move(tasks), jobs);

  if (cfg.value("grid", false)) {
    // dense prediction grid for external plotting, first repeat's models
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
      const auto& v = variants[vi];
      const std::uint64_t rep_seed = derive_seed(base_seed, "rep", 0);
      auto ctx = make_repeat_context(cfg, rep_seed);
      const std::uint64_t vseed = derive_seed(base_seed, v.name, 0);
      json mj = model_json_for_grid(cfg.at("model"), v);
      auto mc = model_from_json(mj, 2, 3, derive_seed(vseed, "model-init"));
      auto model = build_classifier(mc);
      DefenseConfig defense;
      if (v.with_ca) {
        defense.kind = DefenseKind::CaLoR;
        defense.ca = ca_from_json(cfg.at("ca"));
      }
      train(model, ctx.data, defense, train_from_json(cfg.at("train"), derive_seed(vseed, "train")));
      json grid = json::array();
      for (double y = -6.0; y <= 6.0 + 1e-9; y += 0.2) {
        for (double x = -6.0; x <= 6.0 + 1e-9; x += 0.2) {
          const auto probs = model.predict_probs({x, y}, 1);
          grid.push_back({x, y, probs[0], probs[1], probs[2]});
        }
      }
      results[vi].extra["confidence_grid"] = std::move(grid);
    }
  }
  return results;
}

std::vector<VariantResult> run_rank_sweep(const json& cfg, int jobs) {
  const std::uint64_t base_seed = cfg.at("seed").get<std::uint64_t>();
  const int repeats = cfg.at("repeats").get<int>();

  std::vector<VariantTask> tasks;
  for (const auto& rank_entry : cfg.at("ranks")) {
    tasks.push_back([&cfg, rank_entry, base_seed, repeats] {
      const bool full = rank_entry.is_string();
      const std::string name = full ? "full" : ("r" + std::to_string(rank_entry.get<int>()));
      std::vector<VariantSample> samples;
      int effective_rank = 0;
      for (int rep = 0; rep < repeats; ++rep) {
        const std::uint64_t rep_seed = derive_seed(base_seed, "rep", rep);
        auto ctx = make_repeat_context(cfg, rep_seed);
        const std::uint64_t vseed = derive_seed(base_seed, name, rep);
        auto mc = model_from_json(cfg.at("model"), ctx.data.train.dim(),
                                  ctx.data.train.classes(), derive_seed(vseed, "model-init"));
        if (full) {
          mc.head = HeadKind::Standard;
        } else {
          mc.head = HeadKind::LowRank;
          mc.rank = rank_entry.get<int>();
        }
        auto model = build_classifier(mc);
        effective_rank = matrix_rank(model.effective_head_matrix());
        DefenseConfig none;
        auto report = train(model, ctx.data, none,
                            train_from_json(cfg.at("train"), derive_seed(vseed, "train")));
        samples.push_back(measure_variant(cfg, ctx, model, report, vseed, false));
      }
      VariantResult result;
      result.name = name;
      result.row = aggregate_rows(name, samples, topk_k_for(cfg.at("dataset").at("classes")));
      json seeds = json::array();
      for (int rep = 0; rep < repeats; ++rep) seeds.push_back(derive_seed(base_seed, name, rep));
      result.extra["variant_seeds"] = std::move(seeds);
      result.extra["head_rank"] = effective_rank;
      result.confidence_trace = mean_traces(samples, false);
      result.grad_norm_trace = mean_traces(samples, true);
      return result;
    });
  }
  return run_tasks(std::move(tasks), jobs);
}

std::vector<VariantResult> run_activation_sweep(const json& cfg, int jobs) {
  const std::uint64_t base_seed = cfg.at("seed").get<std::uint64_t>();
  const int repeats = cfg.at("repeats").get<int>();

  std::vector<VariantTask> tasks;
  for (const auto& act_entry : cfg.at("activations")) {
    const std::string act_name = act_entry.get<std::string>();
    tasks.push_back([&cfg, act_name, base_seed, repeats] {
      std::vector<VariantSample> samples;
      std::vector<double> terminals;
      for (int rep = 0; rep < repeats; ++rep) {
        const std::uint64_t rep_seed = derive_seed(base_seed, "rep", rep);
        auto ctx = make_repeat_context(cfg, rep_seed);
        const std::uint64_t vseed = derive_seed(base_seed, act_name, rep);
        auto mc = model_from_json(cfg.at("model"), ctx.data.train.dim(),
                                  ctx.data.train.classes(), derive_seed(vseed, "model-init"));
        mc.head = HeadKind::LowRank;
        mc.head_activation = activation_from_string(act_name);
        auto model = build_classifier(mc);
        DefenseConfig none;
        auto report = train(model, ctx.data, none,
                            train_from_json(cfg.at("train"), derive_seed(vseed, "train")));
        auto sample = measure_variant(cfg, ctx, model, report, vseed, false);
        terminals.push_back(sample.terminal_grad);
        samples.push_back(std::move(sample));
      }
      VariantResult result;
      result.name = act_name;
      result.row = aggregate_rows(act_name, samples, topk_k_for(cfg.at("dataset").at("classes")));
      json seeds = json::array();
      for (int rep = 0; rep < repeats; ++rep) seeds.push_back(derive_seed(base_seed, act_name, rep));
      result.extra["variant_seeds"] = std::move(seeds);
      result.extra["terminal_grad_median"] = median(terminals);
      result.extra["per_seed_terminal_grad"] = terminals;
      result.confidence_trace = mean_traces(samples, false);
      result.grad_norm_trace = mean_traces(samples, true);
      return result;
    });
  }
  return run_tasks(std::move(tasks), jobs);
}

std::vector<VariantResult> run_confidence_sweep(const json& cfg, int jobs) {
  const std::uint64_t base_seed = cfg.at("seed").get<std::uint64_t>();
  const int repeats = cfg.at("repeats").get<int>();
  const auto checkpoints = cfg.at("checkpoints").get<std::vector<int>>();
  for (std::size_t i = 1; i < checkpoints.size(); ++i) {
    if (checkpoints[i] <= checkpoints[i - 1]) {
      throw ValidationError("confidence-sweep: checkpoints must be strictly increasing");
    }
  }

  // The incremental training chain is inherently sequential; run it once per
  // repeat and attack the snapshots (snapshot attacks parallelize poorly at
  // this scale, so the whole sweep is one task per repeat).
  std::vector<VariantTask> tasks;
  for (int rep = 0; rep < repeats; ++rep) {
    tasks.push_back([&cfg, checkpoints, base_seed, rep] {
      const std::uint64_t rep_seed = derive_seed(base_seed, "rep", rep);
      auto ctx = make_repeat_context(cfg, rep_seed);
      auto mc = model_from_json(cfg.at("model"), ctx.data.train.dim(), ctx.data.train.classes(),
                                derive_seed(rep_seed, "model-init"));
      auto model = build_classifier(mc);
      DefenseConfig none;

      VariantResult result;  // carries the per-checkpoint table in extra
      result.name = "repeat-" + std::to_string(rep);
      result.extra["variant_seeds"] = json::array({rep_seed});
      json rows = json::array();
      std::vector<double> confs, accs;
      int trained = 0;
      for (int ep : checkpoints) {
        auto opts = train_from_json(cfg.at("train"), derive_seed(rep_seed, "train", ep));
        opts.epochs = ep - trained;
        train(model, ctx.data, none, opts);
        trained = ep;
        auto snapshot = model.clone();
        const double conf = mean_confidence(snapshot, ctx.data.train);
        const auto attack =
            run_attacks(snapshot, ctx.data, cfg.at("attack"), derive_seed(rep_seed, "attack", ep));
        const int n = static_cast<int>(attack.targets.size());
        const double acc1 = topk_accuracy(ctx.eval, attack.recons, attack.targets, n, 1);
        confs.push_back(conf);
        accs.push_back(acc1);
        rows.push_back({{"epoch", ep},
                        {"mean_confidence", conf},
                        {"acc_at_1", acc1},
                        {"test_acc", accuracy(snapshot, ctx.data.test)}});
      }
      result.extra["checkpoints"] = std::move(rows);
      result.extra["spearman_acc_vs_confidence"] = spearman(accs, confs);
      result.row.variant = result.name;
      result.row.k = topk_k_for(ctx.data.train.classes());
      result.row.test_accuracy = accuracy(model, ctx.data.test);
      result.row.acc_at_1 = accs.back();
      result.row.mean_confidence = confs.back();
      return result;
    });
  }
  return run_tasks(std::move(tasks), jobs);
}

std::vector<VariantResult> run_ae_rank_sweep(const json& cfg, int jobs) {
  const std::uint64_t base_seed = cfg.at("seed").get<std::uint64_t>();
  const auto& aej = cfg.at("ae");

  // one shared dataset/eval context; the sweep varies only the bottleneck
  auto ctx = make_repeat_context(cfg, derive_seed(base_seed, "rep", 0));

  std::vector<VariantTask> tasks;
  for (const auto& rank_entry : cfg.at("ranks")) {
    const int rank = rank_entry.get<int>();
    tasks.push_back([&cfg, &ctx, &aej, base_seed, rank] {
      AutoencoderConfig ae_cfg;
      ae_cfg.input_dim = ctx.data.train.dim();
      ae_cfg.hidden = aej.at("hidden").get<int>();
      ae_cfg.rank = rank;
      ae_cfg.init_seed = derive_seed(base_seed, "ae-init", rank);
      auto ae = build_autoencoder(ae_cfg);

      SgdOptimizer opt(ae.params(), aej.at("lr").get<double>(), aej.value("momentum", 0.9));
      Rng shuffle_rng(derive_seed(base_seed, "ae-shuffle", rank));
      const int batch = aej.value("batch", 32);
      std::vector<int> order(ctx.data.train.size());
      for (int i = 0; i < ctx.data.train.size(); ++i) order[i] = i;
      const int epochs = aej.at("epochs").get<int>();
      for (int epoch = 0; epoch < epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(batch)) {
          const std::size_t e = std::min(order.size(), b + batch);
          std::vector<double> rows;
          for (std::size_t i = b; i < e; ++i) {
            rows.insert(rows.end(), ctx.data.train.row(order[i]),
                        ctx.data.train.row(order[i]) + ctx.data.train.dim());
          }
          Tape tape;
          auto x = make_leaf({static_cast<int>(e - b), ctx.data.train.dim()}, rows);
          auto diff = tape.sub(ae.forward(tape, x), x);
          auto loss = tape.mean(tape.mul(diff, diff));
          if (!std::isfinite(loss->values[0])) {
            throw TrainingError("autoencoder diverged at epoch " + std::to_string(epoch), epoch);
          }
          tape.backward(loss);
          opt.step();
        }
      }

      auto evaluated = ae_eval(ae, ctx.data.test, ctx.eval);
      VariantResult result;
      result.name = "r" + std::to_string(rank);
      result.row.variant = result.name;
      result.row.k = topk_k_for(ctx.data.train.classes());
      result.row.test_accuracy = ctx.eval.test_accuracy;
      result.extra["variant_seeds"] = json::array({ae_cfg.init_seed});
      result.extra["rank"] = rank;
      result.extra["mse"] = evaluated.mse;
      result.extra["reclass_accuracy"] = evaluated.reclass_accuracy;
      return result;
    });
  }
  auto results = run_tasks(std::move(tasks), jobs);

  std::vector<double> ranks, mses, reclass;
  for (const auto& r : results) {
    ranks.push_back(r.extra.at("rank").get<double>());
    mses.push_back(r.extra.at("mse").get<double>());
    reclass.push_back(r.extra.at("reclass_accuracy").get<double>());
  }
  const double mse_rho = spearman(mses, ranks);
  const double reclass_rho = spearman(reclass, ranks);
  for (auto& r : results) {
    r.extra["mse_spearman_vs_rank"] = mse_rho;
    r.extra["reclass_spearman_vs_rank"] = reclass_rho;
  }
  return results;
}

std::vector<VariantResult> run_defense_compare(const json& cfg, int jobs) {
  const std::uint64_t base_seed = cfg.at("seed").get<std::uint64_t>();
  const int repeats = cfg.at("repeats").get<int>();
  const bool want_kes = cfg.value("kes", true);

  std::vector<VariantTask> tasks;
  for (const auto& name_entry : cfg.at("defenses")) {
    const std::string name = name_entry.get<std::string>();
    tasks.push_back([&cfg, name, base_seed, repeats, want_kes] {
      const auto& params = cfg.at("defense_params");
      std::vector<VariantSample> samples;
      for (int rep = 0; rep < repeats; ++rep) {
        const std::uint64_t rep_seed = derive_seed(base_seed, "rep", rep);
        auto ctx = make_repeat_context(cfg, rep_seed);
        const std::uint64_t vseed = derive_seed(base_seed, name, rep);

        auto mc = model_from_json(cfg.at("model"), ctx.data.train.dim(),
                                  ctx.data.train.classes(), derive_seed(vseed, "model-init"));
        DefenseConfig defense;
        defense.kind = defense_kind_from_string(name);
        switch (defense.kind) {
          case DefenseKind::CaLoR: {
            const auto& p = params.at("calor");
            mc.head = HeadKind::LowRank;
            mc.rank = p.at("rank").get<int>();
            mc.head_activation = activation_from_string(p.value("head_activation", "tanh"));
            defense.rank = mc.rank;
            defense.ca = ca_from_json(cfg.at("ca"));
            break;
          }
          case DefenseKind::LS:
            defense.ls_lambda = params.at("ls").at("lambda").get<double>();
            break;
          case DefenseKind::MID:
            defense.mid_lambda = params.at("mid").at("lambda").get<double>();
            defense.mid_width = params.at("mid").at("width").get<int>();
            mc.vib_width = defense.mid_width;
            break;
          case DefenseKind::BiDO:
            defense.bido_lambda_iz = params.at("bido").at("lambda_iz").get<double>();
            defense.bido_lambda_oz = params.at("bido").at("lambda_oz").get<double>();
            defense.bido_kernel_width = params.at("bido").value("kernel_width", 0.0);
            break;
          case DefenseKind::TL:
            defense.tl_freeze_ratio = params.at("tl").at("freeze_ratio").get<double>();
            break;
          case DefenseKind::None:
            break;
        }
        auto model = build_classifier(mc);
        json train_json = cfg.at("train");
        if (params.contains(name) && params.at(name).contains("train")) {
          deep_merge(train_json, params.at(name).at("train"));
        }
        auto report =
            train(model, ctx.data, defense, train_from_json(train_json, derive_seed(vseed, "train")));
        samples.push_back(measure_variant(cfg, ctx, model, report, vseed, want_kes));
      }
      VariantResult result;
      result.name = name;
      result.row = aggregate_rows(name, samples, topk_k_for(cfg.at("dataset").at("classes")));
      json seeds = json::array();
      for (int rep = 0; rep < repeats; ++rep) seeds.push_back(derive_seed(base_seed, name, rep));
      result.extra["variant_seeds"] = std::move(seeds);
      std::vector<double> dists;
      for (const auto& s : samples) dists.push_back(s.median_distance);
      result.extra["median_distance"] = median(dists);
      result.confidence_trace = mean_traces(samples, false);
      result.grad_norm_trace = mean_traces(samples, true);
      return result;
    });
  }
  return run_tasks(std::move(tasks), jobs);
}

std::vector<VariantResult> run_adv_probe(const json& cfg, int jobs) {
  const std::uint64_t base_seed = cfg.at("seed").get<std::uint64_t>();
  const int repeats = cfg.at("repeats").get<int>();
  const auto& aj = cfg.at("adv");

  struct Probe {
    const char* attack;
    bool targeted;
  };
  const Probe probes[] = {{"fgsm", false}, {"pgd", false},  {"bim", false},
                          {"fgsm", true},  {"pgd", true},   {"bim", true}};

  std::vector<VariantTask> tasks;
  for (const auto& probe : probes) {
    tasks.push_back([&cfg, &aj, probe, base_seed, repeats] {
      std::vector<double> asrs, cleans, linf;
      for (int rep = 0; rep < repeats; ++rep) {
        const std::uint64_t rep_seed = derive_seed(base_seed, "rep", rep);
        auto data = generate(dataset_from_json(cfg.at("dataset"), derive_seed(rep_seed, "data")));
        auto mc = model_from_json(cfg.at("model"), data.train.dim(), data.train.classes(),
                                  derive_seed(rep_seed, "model-init"));
        auto model = build_classifier(mc);
        DefenseConfig none;
        auto report = train(model, data, none,
                            train_from_json(cfg.at("train"), derive_seed(rep_seed, "train")));
        cleans.push_back(1.0 - report.test_accuracy);

        AdvConfig adv;
        adv.epsilon = aj.at("epsilon").get<double>();
        adv.alpha = aj.at("alpha").get<double>();
        adv.steps = aj.at("steps").get<int>();
        adv.targeted = probe.targeted;
        adv.seed = derive_seed(rep_seed, "adv");
        std::vector<double> out;
        const std::string attack = probe.attack;
        if (attack == "fgsm") {
          out = fgsm(model, data.test.features, data.test.labels, data.test.size(), adv);
        } else {
          adv.random_start = attack == "pgd" && aj.value("random_start", true);
          out = pgd(model, data.test.features, data.test.labels, data.test.size(), adv);
        }
        double worst = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
          worst = std::max(worst, std::abs(out[i] - data.test.features[i]));
        }
        linf.push_back(worst);
        asrs.push_back(attack_success_rate(model, out, data.test.labels, data.test.size(),
                                           probe.targeted));
      }
      VariantResult result;
      result.name = std::string(probe.attack) + (probe.targeted ? "-targeted" : "-untargeted");
      result.row.variant = result.name;
      result.row.k = 1;
      result.row.test_accuracy = 1.0 - median(cleans);
      json seeds = json::array();
      for (int rep = 0; rep < repeats; ++rep) seeds.push_back(derive_seed(base_seed, "rep", rep));
      result.extra["variant_seeds"] = std::move(seeds);
      result.extra["asr_median"] = median(asrs);
      result.extra["per_seed_asr"] = asrs;
      result.extra["clean_error_median"] = median(cleans);
      result.extra["max_linf"] = *std::max_element(linf.begin(), linf.end());
      result.extra["epsilon"] = aj.at("epsilon").get<double>();
      return result;
    });
  }
  return run_tasks(std::move(tasks), jobs);
}

std::vector<VariantResult> run_calibration(const json& cfg, int) {
  const double a = cfg.at("a").get<double>();
  const double tol = cfg.at("tolerance").get<double>();
  std::vector<VariantResult> results;
  for (const auto& bj : cfg.at("b_values")) {
    const double b = bj.get<double>();
    const double numeric = minimize_ca_loss_numeric(a, b, tol);
    const double analytic = ca_minimizer(b);
    const double d1 = a * std::pow(analytic, b - 1.0) * (b * std::log(analytic) + 1.0);
    const double d2 =
        a * std::pow(analytic, b - 2.0) * (b * (b - 1.0) * std::log(analytic) + 2.0 * b - 1.0);
    VariantResult r;
    r.name = "b=" + std::to_string(static_cast<int>(b));
    r.row.variant = r.name;
    r.row.k = 1;
    r.extra["b"] = b;
    r.extra["numeric_minimizer"] = numeric;
    r.extra["analytic_minimizer"] = analytic;
    r.extra["abs_error"] = std::abs(numeric - analytic);
    r.extra["derivative_at_minimizer"] = d1;
    r.extra["second_derivative_at_minimizer"] = d2;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace

double minimize_ca_loss_numeric(double a, double b, double tol) {
  if (!(a > 0.0) || !(b > 0.0)) throw ContractError("minimize_ca_loss_numeric: a, b must be > 0");
  auto f = [a, b](double t) { return a * std::pow(t, b) * std::log(t); };
  const double phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double lo = 1e-12, hi = 1.0;
  double c = hi - phi * (hi - lo);
  double d = lo + phi * (hi - lo);
  while (hi - lo > tol) {
    if (f(c) < f(d)) {
      hi = d;
    } else {
      lo = c;
    }
    c = hi - phi * (hi - lo);
    d = lo + phi * (hi - lo);
  }
  return (lo + hi) / 2.0;
}

std::vector<std::pair<std::string, std::string>> list_experiments() {
  return {
      {"toy2d-defense-grid",
       "trains {no-defense, tanh-only, low-rank, low-rank+tanh} on 2D clusters and inverts each"},
      {"rank-sweep", "sweeps the low-rank head width and reports utility vs attack metrics"},
      {"activation-sweep", "sweeps the head activation and records attack gradient traces"},
      {"confidence-sweep", "attacks checkpoints of one training run at rising confidence"},
      {"ae-rank-sweep", "trains autoencoders across bottleneck widths, reports mse/reclassification"},
      {"defense-compare", "all defenses side by side under the same inversion attack"},
      {"adv-probe", "fgsm/pgd/bim success rates, targeted and untargeted"},
      {"calibration", "numeric check of the confidence-adaptation loss minimizer"},
  };
}

json resolve_config(const json& user) {
  if (!user.contains("experiment")) throw UsageError("config missing 'experiment'");
  json resolved = default_config(user.at("experiment").get<std::string>());
  deep_merge(resolved, user);
  return resolved;
}

ExperimentReport run_experiment(const json& config, int jobs) {
  const auto start = std::chrono::steady_clock::now();
  json cfg = resolve_config(config);
  const std::string name = cfg.at("experiment").get<std::string>();

  ExperimentReport report;
  report.experiment = name;
  report.config_echo = cfg;

  if (name == "toy2d-defense-grid") {
    report.variants = run_toy_grid(cfg, jobs);
  } else if (name == "rank-sweep") {
    report.variants = run_rank_sweep(cfg, jobs);
  } else if (name == "activation-sweep") {
    report.variants = run_activation_sweep(cfg, jobs);
  } else if (name == "confidence-sweep") {
    report.variants = run_confidence_sweep(cfg, jobs);
  } else if (name == "ae-rank-sweep") {
    report.variants = run_ae_rank_sweep(cfg, jobs);
  } else if (name == "defense-compare") {
    report.variants = run_defense_compare(cfg, jobs);
  } else if (name == "adv-probe") {
    report.variants = run_adv_probe(cfg, jobs);
  } else if (name == "calibration") {
    report.variants = run_calibration(cfg, jobs);
  } else {
    throw UsageError("unknown experiment '" + name + "'");
  }

  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

namespace {

json row_to_json(const MetricRow& row) {
  json j;
  j["variant"] = row.variant;
  j["test_acc"] = row.test_accuracy;
  j["acc_at_1"] = row.acc_at_1;
  j["acc_at_k"] = row.acc_at_k;
  j["k"] = row.k;
  j["delta_eval"] = row.delta_eval;
  j["mean_confidence"] = row.mean_confidence;
  j["terminal_grad_norm"] = row.terminal_grad_norm;
  if (row.kes.has_value()) j["kes"] = *row.kes;
  return j;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path + "'");
  out << text;
  if (!out) throw IoError("write to '" + path + "' failed");
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

json ExperimentReport::to_json() const {
  json j;
  j["experiment"] = experiment;
  j["tool_version"] = kToolVersion;
  j["config_echo"] = config_echo;
  j["base_seed"] = config_echo.value("seed", 0);
  j["wall_seconds"] = wall_seconds;
  j["rows"] = json::array();
  j["variants"] = json::array();
  for (const auto& v : variants) {
    j["rows"].push_back(row_to_json(v.row));
    json vj;
    vj["name"] = v.name;
    vj["metrics"] = row_to_json(v.row);
    vj["extra"] = v.extra;
    if (!v.trace_file.empty()) vj["trace_file"] = v.trace_file;
    j["variants"].push_back(std::move(vj));
  }
  return j;
}

EmitResult emit(ExperimentReport& report, const std::string& out_dir) {
  EmitResult result;
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);

  // traces first: the report may only reference files that already exist
  for (auto& v : report.variants) {
    if (v.grad_norm_trace.empty()) continue;
    const fs::path trace_path = dir / (v.name + "_trace.csv");
    std::string text = "step,confidence,grad_norm\n";
    for (std::size_t t = 0; t < v.grad_norm_trace.size(); ++t) {
      text += std::to_string(t);
      text += ',';
      text += format_double(t < v.confidence_trace.size() ? v.confidence_trace[t] : 0.0);
      text += ',';
      text += format_double(v.grad_norm_trace[t]);
      text += '\n';
    }
    write_text(trace_path.string(), text);
    v.trace_file = trace_path.string();
    result.trace_paths.push_back(trace_path.string());
  }

  // metric table, one row per variant
  {
    std::string text = "variant,test_acc,acc_at_1,acc_at_k,k,delta_eval,mean_confidence,terminal_grad_norm,kes\n";
    for (const auto& v : report.variants) {
      const auto& r = v.row;
      text += r.variant + ',' + format_double(r.test_accuracy) + ',' + format_double(r.acc_at_1) +
              ',' + format_double(r.acc_at_k) + ',' + std::to_string(r.k) + ',' +
              format_double(r.delta_eval) + ',' + format_double(r.mean_confidence) + ',' +
              format_double(r.terminal_grad_norm) + ',' +
              (r.kes.has_value() ? format_double(*r.kes) : std::string()) + '\n';
    }
    const fs::path metrics_path = dir / "metrics.csv";
    write_text(metrics_path.string(), text);
    result.metrics_csv_path = metrics_path.string();
  }

  // experiment-specific tables
  if (report.experiment == "calibration") {
    std::string text = "b,numeric_minimizer,analytic_minimizer,abs_error,derivative,second_derivative\n";
    for (const auto& v : report.variants) {
      text += format_double(v.extra.at("b").get<double>()) + ',' +
              format_double(v.extra.at("numeric_minimizer").get<double>()) + ',' +
              format_double(v.extra.at("analytic_minimizer").get<double>()) + ',' +
              format_double(v.extra.at("abs_error").get<double>()) + ',' +
              format_double(v.extra.at("derivative_at_minimizer").get<double>()) + ',' +
              format_double(v.extra.at("second_derivative_at_minimizer").get<double>()) + '\n';
    }
    const auto path = (dir / "calibration.csv").string();
    write_text(path, text);
    result.table_paths.push_back(path);
  }
  if (report.experiment == "adv-probe") {
    std::string text = "attack,asr_median,clean_error_median,epsilon,max_linf\n";
    for (const auto& v : report.variants) {
      text += v.name + ',' + format_double(v.extra.at("asr_median").get<double>()) + ',' +
              format_double(v.extra.at("clean_error_median").get<double>()) + ',' +
              format_double(v.extra.at("epsilon").get<double>()) + ',' +
              format_double(v.extra.at("max_linf").get<double>()) + '\n';
    }
    const auto path = (dir / "adv.csv").string();
    write_text(path, text);
    result.table_paths.push_back(path);
  }
  if (report.experiment == "ae-rank-sweep") {
    std::string text = "rank,mse,reclass_accuracy\n";
    for (const auto& v : report.variants) {
      text += format_double(v.extra.at("rank").get<double>()) + ',' +
              format_double(v.extra.at("mse").get<double>()) + ',' +
              format_double(v.extra.at("reclass_accuracy").get<double>()) + '\n';
    }
    const auto path = (dir / "ae_sweep.csv").string();
    write_text(path, text);
    result.table_paths.push_back(path);
  }
  if (report.experiment == "confidence-sweep") {
    std::string text = "repeat,epoch,mean_confidence,acc_at_1,test_acc\n";
    for (const auto& v : report.variants) {
      for (const auto& row : v.extra.at("checkpoints")) {
        text += v.name + ',' + std::to_string(row.at("epoch").get<int>()) + ',' +
                format_double(row.at("mean_confidence").get<double>()) + ',' +
                format_double(row.at("acc_at_1").get<double>()) + ',' +
                format_double(row.at("test_acc").get<double>()) + '\n';
      }
    }
    const auto path = (dir / "checkpoints.csv").string();
    write_text(path, text);
    result.table_paths.push_back(path);
  }
  if (report.experiment == "toy2d-defense-grid" || report.experiment == "defense-compare") {
    std::string text = "variant,median_distance\n";
    for (const auto& v : report.variants) {
      text += v.name + ',' + format_double(v.extra.at("median_distance").get<double>()) + '\n';
    }
    const auto path = (dir / "distances.csv").string();
    write_text(path, text);
    result.table_paths.push_back(path);
  }

  // dense confidence grids go to their own CSVs, not into the JSON report
  for (auto& v : report.variants) {
    if (!v.extra.contains("confidence_grid")) continue;
    std::string text = "x,y,p0,p1,p2\n";
    for (const auto& row : v.extra.at("confidence_grid")) {
      text += format_double(row[0].get<double>()) + ',' + format_double(row[1].get<double>()) +
              ',' + format_double(row[2].get<double>()) + ',' + format_double(row[3].get<double>()) +
              ',' + format_double(row[4].get<double>()) + '\n';
    }
    const auto path = (dir / (v.name + "_grid.csv")).string();
    write_text(path, text);
    v.extra.erase("confidence_grid");
    v.extra["confidence_grid_file"] = path;
    result.table_paths.push_back(path);
  }

  const fs::path report_path = dir / "report.json";
  write_text(report_path.string(), report.to_json().dump(2) + "\n");
  result.report_path = report_path.string();
  return result;
}

}  // namespace invlab
