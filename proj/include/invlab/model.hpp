#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "invlab/linalg.hpp"
#include "invlab/rng.hpp"
#include "invlab/tape.hpp"

namespace invlab {

enum class HeadKind { Standard, LowRank };
enum class InitScheme { Glorot, Identity, Zero };

const char* to_string(HeadKind k);
HeadKind head_kind_from_string(const std::string& name);

struct ModelConfig {
  int input_dim = 2;
  std::vector<int> encoder_widths = {20, 20};
  std::vector<Activation> encoder_acts = {};  // defaults to relu everywhere
  HeadKind head = HeadKind::Standard;
  int rank = 2;                               // LowRank only
  Activation head_activation = Activation::Tanh;  // kappa between the head factors
  int classes = 3;
  std::uint64_t init_seed = 1;
  InitScheme init = InitScheme::Glorot;
  // When set, a Gaussian sampling bottleneck of this width sits between the
  // encoder and the head (used by the MID defense).
  std::optional<int> vib_width;

  void validate() const;
  Activation encoder_act(std::size_t layer) const;
  int feature_dim() const { return encoder_widths.empty() ? input_dim : encoder_widths.back(); }
};

struct DenseLayer {
  TensorPtr w;  // [in x out]
  TensorPtr b;  // [1 x out]
  Activation act = Activation::Relu;
  bool frozen = false;
};

struct StandardHead {
  TensorPtr w;  // [m x N]
  TensorPtr b;  // [1 x N]
};

struct LowRankHead {
  TensorPtr wa;  // [m x r]
  TensorPtr ba;  // [1 x r]
  TensorPtr wb;  // [r x N]
  TensorPtr bb;  // [1 x N]
  Activation kappa = Activation::Tanh;
  int rank = 0;
};

struct VibBottleneck {
  TensorPtr w_mu, b_mu;        // [m x k], [1 x k]
  TensorPtr w_sigma, b_sigma;  // [m x k], [1 x k]; sigma = softplus(raw)
  int width = 0;
};

/// Result of one forward pass; intermediate taps stay on the caller's tape.
struct ForwardTrace {
  TensorPtr logits;
  TensorPtr penultimate;          // pre-head representation
  std::vector<TensorPtr> taps;    // encoder layer outputs, in order
  TensorPtr mid_mu, mid_sigma;    // set when a VIB bottleneck is present
};

class ClassifierModel {
 public:
  ClassifierModel() = default;

  /// Forward pass building logits on the tape. When sample_noise is non-null
  /// and a VIB bottleneck exists, the latent is mu + sigma*eps with eps drawn
  /// from that stream; otherwise the latent is mu.
  ForwardTrace forward_trace(Tape& tape, const TensorPtr& x, Rng* sample_noise = nullptr) const;
  TensorPtr forward(Tape& tape, const TensorPtr& x) const;
  TensorPtr logprobs(Tape& tape, const TensorPtr& x) const;
  TensorPtr probs(Tape& tape, const TensorPtr& x) const;
  TensorPtr penultimate(Tape& tape, const TensorPtr& x) const;

  /// Forward with no tape bookkeeping: probabilities of one batch.
  std::vector<double> predict_probs(const std::vector<double>& x, int batch) const;
  int predict_class(const std::vector<double>& x) const;

  /// The linearized head map [m x N]: W for a standard head, W_A * W_B for a
  /// low-rank head (activation and biases ignored).
  Mat effective_head_matrix() const;

  std::vector<TensorPtr> params() const;
  std::vector<TensorPtr> trainable_params() const;
  std::size_t param_count() const;

  /// First floor(ratio * L) encoder layers excluded from training.
  void set_freeze_ratio(double ratio);

  ClassifierModel clone() const;

  const ModelConfig& config() const { return config_; }
  int input_dim() const { return config_.input_dim; }
  int classes() const { return config_.classes; }
  int feature_dim() const { return config_.feature_dim(); }
  std::uint64_t init_seed() const { return config_.init_seed; }

  std::vector<DenseLayer>& encoder() { return encoder_; }
  const std::vector<DenseLayer>& encoder() const { return encoder_; }
  const std::optional<VibBottleneck>& vib() const { return vib_; }
  std::variant<StandardHead, LowRankHead>& head() { return head_; }
  const std::variant<StandardHead, LowRankHead>& head() const { return head_; }

  friend ClassifierModel build_classifier(const ModelConfig& cfg);

 private:
  ModelConfig config_;
  std::vector<DenseLayer> encoder_;
  std::optional<VibBottleneck> vib_;
  std::variant<StandardHead, LowRankHead> head_;
};

ClassifierModel build_classifier(const ModelConfig& cfg);

struct AutoencoderConfig {
  int input_dim = 256;
  int hidden = 64;
  int rank = 32;
  std::uint64_t init_seed = 1;
  InitScheme init = InitScheme::Glorot;

  void validate() const;
};

class AutoencoderModel {
 public:
  AutoencoderModel() = default;

  TensorPtr forward(Tape& tape, const TensorPtr& x) const;
  TensorPtr encode(Tape& tape, const TensorPtr& x) const;

  std::vector<TensorPtr> params() const;
  int rank() const { return config_.rank; }
  const AutoencoderConfig& config() const { return config_; }

  friend AutoencoderModel build_autoencoder(const AutoencoderConfig& cfg);

 private:
  AutoencoderConfig config_;
  std::vector<DenseLayer> layers_;  // d -> hidden -> r -> hidden -> d
};

/// Dense d -> hidden -> r -> hidden -> d autoencoder; relu on the hidden
/// layers, identity bottleneck and output.
AutoencoderModel build_autoencoder(const AutoencoderConfig& cfg);
TensorPtr ae_forward(Tape& tape, const AutoencoderModel& model, const TensorPtr& x);

/// Checkpoint: JSON manifest plus a flat little-endian float64 parameter
/// blob in manifest order. The round trip is bit-exact.
void save_checkpoint(const ClassifierModel& model, const std::string& manifest_path,
                     const std::string& params_path);
ClassifierModel load_checkpoint(const std::string& manifest_path, const std::string& params_path);

/// Order-insensitive 64-bit digest of all parameter bytes; used to verify
/// that attacks leave models untouched.
std::uint64_t param_checksum(const ClassifierModel& model);

}  // namespace invlab
