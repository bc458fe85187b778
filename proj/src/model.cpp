#include "invlab/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "invlab/defense.hpp"

namespace invlab {

const char* to_string(HeadKind k) { return k == HeadKind::Standard ? "standard" : "lowrank"; }

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "standard") return HeadKind::Standard;
  if (name == "lowrank") return HeadKind::LowRank;
  throw ValidationError("unknown head kind '" + name + "'");
}

void ModelConfig::validate() const {
  if (input_dim < 1) throw ValidationError("model config: input_dim must be positive");
  if (classes < 2) throw ValidationError("model config: classes must be >= 2");
  for (int w : encoder_widths) {
    if (w < 1) throw ValidationError("model config: encoder widths must be positive");
  }
  if (!encoder_acts.empty() && encoder_acts.size() != encoder_widths.size()) {
    throw ValidationError("model config: encoder_acts must match encoder_widths");
  }
  if (head == HeadKind::LowRank) {
    const int m = vib_width.value_or(feature_dim());
    if (rank < 1 || rank > std::min(m, classes)) {
      throw ValidationError("model config: rank " + std::to_string(rank) +
                            " outside [1, min(m=" + std::to_string(m) +
                            ", N=" + std::to_string(classes) + ")]");
    }
  }
  if (vib_width.has_value() && *vib_width < 1) {
    throw ValidationError("model config: vib width must be positive");
  }
}

Activation ModelConfig::encoder_act(std::size_t layer) const {
  if (encoder_acts.empty()) return Activation::Relu;
  return encoder_acts.at(layer);
}

namespace {

TensorPtr init_matrix(Rng& rng, int in, int out, InitScheme scheme) {
  std::vector<double> w(static_cast<std::size_t>(in) * out, 0.0);
  switch (scheme) {
    case InitScheme::Glorot: {
      const double bound = std::sqrt(6.0 / (in + out));
      for (double& x : w) x = rng.uniform(-bound, bound);
      break;
    }
    case InitScheme::Identity:
      for (int i = 0; i < std::min(in, out); ++i) w[static_cast<std::size_t>(i) * out + i] = 1.0;
      break;
    case InitScheme::Zero:
      break;
  }
  return make_leaf({in, out}, std::move(w), true);
}

TensorPtr init_bias(int out) {
  return make_leaf({1, out}, std::vector<double>(out, 0.0), true);
}

DenseLayer make_dense(Rng& rng, int in, int out, Activation act, InitScheme scheme) {
  return DenseLayer{init_matrix(rng, in, out, scheme), init_bias(out), act, false};
}

}  // namespace

ClassifierModel build_classifier(const ModelConfig& cfg) {
  cfg.validate();
  ClassifierModel model;
  model.config_ = cfg;
  Rng rng(derive_seed(cfg.init_seed, "classifier-init"));

  int in = cfg.input_dim;
  for (std::size_t l = 0; l < cfg.encoder_widths.size(); ++l) {
    const int out = cfg.encoder_widths[l];
    model.encoder_.push_back(make_dense(rng, in, out, cfg.encoder_act(l), cfg.init));
    in = out;
  }

  int m = in;
  if (cfg.vib_width.has_value()) {
    VibBottleneck vib;
    vib.width = *cfg.vib_width;
    vib.w_mu = init_matrix(rng, m, vib.width, cfg.init);
    vib.b_mu = init_bias(vib.width);
    vib.w_sigma = init_matrix(rng, m, vib.width, cfg.init);
    vib.b_sigma = init_bias(vib.width);
    model.vib_ = std::move(vib);
    m = *cfg.vib_width;
  }

  if (cfg.head == HeadKind::Standard) {
    StandardHead head;
    head.w = init_matrix(rng, m, cfg.classes, cfg.init);
    head.b = init_bias(cfg.classes);
    model.head_ = std::move(head);
  } else {
    LowRankHead head;
    head.rank = cfg.rank;
    head.kappa = cfg.head_activation;
    head.wa = init_matrix(rng, m, cfg.rank, cfg.init);
    head.ba = init_bias(cfg.rank);
    head.wb = init_matrix(rng, cfg.rank, cfg.classes, cfg.init);
    head.bb = init_bias(cfg.classes);
    model.head_ = std::move(head);
  }
  return model;
}

ForwardTrace ClassifierModel::forward_trace(Tape& tape, const TensorPtr& x,
                                            Rng* sample_noise) const {
  if (!x->is_matrix() || x->cols() != config_.input_dim) {
    throw ShapeError("forward: input shape " + shape_to_string(x->shape) + " does not match d=" +
                     std::to_string(config_.input_dim));
  }
  ForwardTrace trace;
  TensorPtr h = x;
  for (const auto& layer : encoder_) {
    h = tape.activate(tape.add_rowvec(tape.matmul(h, layer.w), layer.b), layer.act);
    trace.taps.push_back(h);
  }

  if (vib_.has_value()) {
    const auto out = mid_head(tape, h, *vib_, sample_noise);
    trace.mid_mu = out.mu;
    trace.mid_sigma = out.sigma;
    h = out.latent;
  }

  if (std::holds_alternative<StandardHead>(head_)) {
    const auto& head = std::get<StandardHead>(head_);
    trace.penultimate = h;
    trace.logits = tape.add_rowvec(tape.matmul(h, head.w), head.b);
  } else {
    const auto& head = std::get<LowRankHead>(head_);
    auto compressed = tape.activate(tape.add_rowvec(tape.matmul(h, head.wa), head.ba), head.kappa);
    trace.penultimate = compressed;
    trace.logits = tape.add_rowvec(tape.matmul(compressed, head.wb), head.bb);
  }
  return trace;
}

TensorPtr ClassifierModel::forward(Tape& tape, const TensorPtr& x) const {
  return forward_trace(tape, x).logits;
}

TensorPtr ClassifierModel::logprobs(Tape& tape, const TensorPtr& x) const {
  return tape.softmax_logprobs(forward(tape, x));
}

TensorPtr ClassifierModel::probs(Tape& tape, const TensorPtr& x) const {
  return tape.exp(logprobs(tape, x));
}

TensorPtr ClassifierModel::penultimate(Tape& tape, const TensorPtr& x) const {
  return forward_trace(tape, x).penultimate;
}

std::vector<double> ClassifierModel::predict_probs(const std::vector<double>& x, int batch) const {
  Tape tape;
  auto input = make_leaf({batch, config_.input_dim}, x);
  return probs(tape, input)->values;
}

int ClassifierModel::predict_class(const std::vector<double>& x) const {
  const auto p = predict_probs(x, 1);
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

Mat ClassifierModel::effective_head_matrix() const {
  if (std::holds_alternative<StandardHead>(head_)) {
    const auto& head = std::get<StandardHead>(head_);
    return Mat(head.w->rows(), head.w->cols(), head.w->values);
  }
  const auto& head = std::get<LowRankHead>(head_);
  const Mat wa(head.wa->rows(), head.wa->cols(), head.wa->values);
  const Mat wb(head.wb->rows(), head.wb->cols(), head.wb->values);
  return matmul(wa, wb);
}

std::vector<TensorPtr> ClassifierModel::params() const {
  std::vector<TensorPtr> out;
  for (const auto& layer : encoder_) {
    out.push_back(layer.w);
    out.push_back(layer.b);
  }
  if (vib_.has_value()) {
    out.push_back(vib_->w_mu);
    out.push_back(vib_->b_mu);
    out.push_back(vib_->w_sigma);
    out.push_back(vib_->b_sigma);
  }
  if (std::holds_alternative<StandardHead>(head_)) {
    const auto& head = std::get<StandardHead>(head_);
    out.push_back(head.w);
    out.push_back(head.b);
  } else {
    const auto& head = std::get<LowRankHead>(head_);
    out.push_back(head.wa);
    out.push_back(head.ba);
    out.push_back(head.wb);
    out.push_back(head.bb);
  }
  return out;
}

std::vector<TensorPtr> ClassifierModel::trainable_params() const {
  std::vector<TensorPtr> out;
  for (const auto& layer : encoder_) {
    if (layer.frozen) continue;
    out.push_back(layer.w);
    out.push_back(layer.b);
  }
  if (vib_.has_value()) {
    out.push_back(vib_->w_mu);
    out.push_back(vib_->b_mu);
    out.push_back(vib_->w_sigma);
    out.push_back(vib_->b_sigma);
  }
  if (std::holds_alternative<StandardHead>(head_)) {
    const auto& head = std::get<StandardHead>(head_);
    out.push_back(head.w);
    out.push_back(head.b);
  } else {
    const auto& head = std::get<LowRankHead>(head_);
    out.push_back(head.wa);
    out.push_back(head.ba);
    out.push_back(head.wb);
    out.push_back(head.bb);
  }
  return out;
}

std::size_t ClassifierModel::param_count() const {
  std::size_t n = 0;
  for (const auto& p : params()) n += p->numel();
  return n;
}

void ClassifierModel::set_freeze_ratio(double ratio) {
  if (ratio < 0.0 || ratio > 1.0) {
    throw ValidationError("freeze ratio must be in [0, 1], got " + std::to_string(ratio));
  }
  const auto frozen_layers =
      static_cast<std::size_t>(std::floor(ratio * static_cast<double>(encoder_.size())));
  for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].frozen = i < frozen_layers;
}

ClassifierModel ClassifierModel::clone() const {
  ClassifierModel copy = *this;
  copy.encoder_.clear();
  for (const auto& layer : encoder_) {
    copy.encoder_.push_back(DenseLayer{
        make_leaf(layer.w->shape, layer.w->values, true),
        make_leaf(layer.b->shape, layer.b->values, true), layer.act, layer.frozen});
  }
  if (vib_.has_value()) {
    VibBottleneck vib;
    vib.width = vib_->width;
    vib.w_mu = make_leaf(vib_->w_mu->shape, vib_->w_mu->values, true);
    vib.b_mu = make_leaf(vib_->b_mu->shape, vib_->b_mu->values, true);
    vib.w_sigma = make_leaf(vib_->w_sigma->shape, vib_->w_sigma->values, true);
    vib.b_sigma = make_leaf(vib_->b_sigma->shape, vib_->b_sigma->values, true);
    copy.vib_ = std::move(vib);
  }
  if (std::holds_alternative<StandardHead>(head_)) {
    const auto& head = std::get<StandardHead>(head_);
    copy.head_ = StandardHead{make_leaf(head.w->shape, head.w->values, true),
                              make_leaf(head.b->shape, head.b->values, true)};
  } else {
    const auto& head = std::get<LowRankHead>(head_);
    copy.head_ = LowRankHead{make_leaf(head.wa->shape, head.wa->values, true),
                             make_leaf(head.ba->shape, head.ba->values, true),
                             make_leaf(head.wb->shape, head.wb->values, true),
                             make_leaf(head.bb->shape, head.bb->values, true),
                             head.kappa, head.rank};
  }
  return copy;
}

void AutoencoderConfig::validate() const {
  if (input_dim < 1 || hidden < 1 || rank < 1) {
    throw ValidationError("autoencoder config: dimensions must be positive");
  }
  if (rank > input_dim) {
    throw ValidationError("autoencoder config: rank " + std::to_string(rank) +
                          " exceeds input dim " + std::to_string(input_dim));
  }
}

AutoencoderModel build_autoencoder(const AutoencoderConfig& cfg) {
  cfg.validate();
  AutoencoderModel model;
  model.config_ = cfg;
  Rng rng(derive_seed(cfg.init_seed, "autoencoder-init"));
  if (cfg.init == InitScheme::Identity) {
    // Pure linear stack so an identity-initialized model is the identity map.
    model.layers_.push_back(make_dense(rng, cfg.input_dim, cfg.hidden, Activation::Identity, cfg.init));
    model.layers_.push_back(make_dense(rng, cfg.hidden, cfg.rank, Activation::Identity, cfg.init));
    model.layers_.push_back(make_dense(rng, cfg.rank, cfg.hidden, Activation::Identity, cfg.init));
    model.layers_.push_back(make_dense(rng, cfg.hidden, cfg.input_dim, Activation::Identity, cfg.init));
  } else {
    model.layers_.push_back(make_dense(rng, cfg.input_dim, cfg.hidden, Activation::Relu, cfg.init));
    model.layers_.push_back(make_dense(rng, cfg.hidden, cfg.rank, Activation::Identity, cfg.init));
    model.layers_.push_back(make_dense(rng, cfg.rank, cfg.hidden, Activation::Relu, cfg.init));
    model.layers_.push_back(make_dense(rng, cfg.hidden, cfg.input_dim, Activation::Identity, cfg.init));
  }
  return model;
}

TensorPtr AutoencoderModel::forward(Tape& tape, const TensorPtr& x) const {
  TensorPtr h = x;
  for (const auto& layer : layers_) {
    h = tape.activate(tape.add_rowvec(tape.matmul(h, layer.w), layer.b), layer.act);
  }
  return h;
}

TensorPtr AutoencoderModel::encode(Tape& tape, const TensorPtr& x) const {
  TensorPtr h = x;
  for (std::size_t i = 0; i < 2; ++i) {
    h = tape.activate(tape.add_rowvec(tape.matmul(h, layers_[i].w), layers_[i].b), layers_[i].act);
  }
  return h;
}

std::vector<TensorPtr> AutoencoderModel::params() const {
  std::vector<TensorPtr> out;
  for (const auto& layer : layers_) {
    out.push_back(layer.w);
    out.push_back(layer.b);
  }
  return out;
}

TensorPtr ae_forward(Tape& tape, const AutoencoderModel& model, const TensorPtr& x) {
  return model.forward(tape, x);
}

namespace {

nlohmann::json model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["input_dim"] = cfg.input_dim;
  j["encoder_widths"] = cfg.encoder_widths;
  std::vector<std::string> acts;
  for (std::size_t i = 0; i < cfg.encoder_widths.size(); ++i)
    acts.push_back(to_string(cfg.encoder_act(i)));
  j["encoder_acts"] = acts;
  j["head"] = to_string(cfg.head);
  j["rank"] = cfg.rank;
  j["head_activation"] = to_string(cfg.head_activation);
  j["classes"] = cfg.classes;
  j["init_seed"] = cfg.init_seed;
  j["init"] = cfg.init == InitScheme::Glorot ? "glorot"
             : cfg.init == InitScheme::Identity ? "identity" : "zero";
  if (cfg.vib_width.has_value()) j["vib_width"] = *cfg.vib_width;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.input_dim = j.at("input_dim").get<int>();
  cfg.encoder_widths = j.at("encoder_widths").get<std::vector<int>>();
  cfg.encoder_acts.clear();
  for (const auto& name : j.at("encoder_acts")) {
    cfg.encoder_acts.push_back(activation_from_string(name.get<std::string>()));
  }
  cfg.head = head_kind_from_string(j.at("head").get<std::string>());
  cfg.rank = j.at("rank").get<int>();
  cfg.head_activation = activation_from_string(j.at("head_activation").get<std::string>());
  cfg.classes = j.at("classes").get<int>();
  cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
  const auto init = j.at("init").get<std::string>();
  cfg.init = init == "glorot" ? InitScheme::Glorot
             : init == "identity" ? InitScheme::Identity : InitScheme::Zero;
  if (j.contains("vib_width")) cfg.vib_width = j.at("vib_width").get<int>();
  return cfg;
}

}  // namespace

void save_checkpoint(const ClassifierModel& model, const std::string& manifest_path,
                     const std::string& params_path) {
  nlohmann::json manifest;
  manifest["config"] = model_config_to_json(model.config());
  manifest["seed"] = model.init_seed();
  manifest["params_file"] = params_path;
  nlohmann::json layers = nlohmann::json::array();
  const auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i) {
    nlohmann::json entry;
    entry["index"] = i;
    entry["shape"] = params[i]->shape;
    layers.push_back(entry);
  }
  manifest["layers"] = layers;

  std::ofstream mout(manifest_path);
  if (!mout) throw IoError("save_checkpoint: cannot write '" + manifest_path + "'");
  mout << manifest.dump(2) << "\n";

  std::ofstream pout(params_path, std::ios::binary);
  if (!pout) throw IoError("save_checkpoint: cannot write '" + params_path + "'");
  for (const auto& p : params) {
    // Little-endian float64; this codebase only targets little-endian hosts.
    pout.write(reinterpret_cast<const char*>(p->values.data()),
               static_cast<std::streamsize>(p->values.size() * sizeof(double)));
  }
  if (!pout) throw IoError("save_checkpoint: write to '" + params_path + "' failed");
}

ClassifierModel load_checkpoint(const std::string& manifest_path, const std::string& params_path) {
  std::ifstream min(manifest_path);
  if (!min) throw IoError("load_checkpoint: cannot open '" + manifest_path + "'");
  nlohmann::json manifest;
  try {
    min >> manifest;
  } catch (const std::exception& e) {
    throw ParseError("load_checkpoint: '" + manifest_path + "': " + e.what());
  }
  ClassifierModel model = build_classifier(model_config_from_json(manifest.at("config")));

  std::ifstream pin(params_path, std::ios::binary);
  if (!pin) throw IoError("load_checkpoint: cannot open '" + params_path + "'");
  for (const auto& p : model.params()) {
    pin.read(reinterpret_cast<char*>(p->values.data()),
             static_cast<std::streamsize>(p->values.size() * sizeof(double)));
    if (!pin) throw ParseError("load_checkpoint: '" + params_path + "' is truncated");
  }
  return model;
}

std::uint64_t param_checksum(const ClassifierModel& model) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (const auto& p : model.params()) {
    for (double v : p->values) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      for (int shift = 0; shift < 64; shift += 8) {
        h ^= (bits >> shift) & 0xFF;
        h *= 0x100000001B3ULL;
      }
    }
  }
  return h;
}

}  // namespace invlab
