#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsd/gaussian.hpp"
#include "dsd/rng.hpp"

namespace dsd::nn {

/// Fully connected net with SiLU hidden activations and a linear output layer.
///
/// All weights and biases live in one flat buffer. Layer l stores its weight
/// matrix (out x in, row-major) followed by its bias vector. Inputs are rows of
/// a batch matrix.
class DenseNet {
 public:
  /// Per-layer activations saved by `forward` for the backward pass.
  struct Cache {
    std::vector<Mat> inputs;  // input to each layer
    std::vector<Mat> pre;     // pre-activation of each hidden layer
  };

  DenseNet() = default;

  /// Zero-initialized net; sizes = {in, hidden..., out}, at least two entries.
  explicit DenseNet(std::vector<int> sizes);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.
  static DenseNet random(std::vector<int> sizes, Rng& rng);

  const std::vector<int>& sizes() const { return sizes_; }
  int input_dim() const { return sizes_.front(); }
  int output_dim() const { return sizes_.back(); }
  int layer_count() const { return static_cast<int>(sizes_.size()) - 1; }
  Eigen::Index param_count() const { return params_.size(); }

  Vec& params() { return params_; }
  const Vec& params() const { return params_; }

  Mat forward(const Mat& x, Cache* cache = nullptr) const;

  /// Given dL/d(output) for the batch cached by `forward`, adds dL/d(params)
  /// to `param_grad` (if non-null) and returns dL/d(input).
  Mat backward(const Cache& cache, const Mat& upstream, Vec* param_grad) const;

  /// FNV-1a over the parameter bytes and layer sizes.
  std::uint64_t hash() const;

 private:
  Eigen::Index weight_offset(int layer) const { return offsets_[layer]; }

  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Vec params_;
};

double silu(double x);
double silu_grad(double x);

/// Adam with bias correction.
struct Adam {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vec m;
  Vec v;
  long t = 0;

  void step(Vec& params, const Vec& grad);
};

enum class Precond { None, Edm };

std::string to_string(Precond p);
Precond precond_from_string(const std::string& s);

/// Denoiser D(x, sigma) built around a DenseNet whose last input channel
/// carries log(sigma) / 4.
///
/// With Precond::None, D(x, sigma) = net([x, log(sigma)/4]). With Precond::Edm,
/// D = c_skip x + c_out net([c_in x, log(sigma)/4]) where
/// c_skip = sd^2 / (sigma^2 + sd^2), c_out = sigma sd / sqrt(sigma^2 + sd^2),
/// c_in = 1 / sqrt(sigma^2 + sd^2) and sd is `sigma_data`.
struct Denoiser {
  struct Cache {
    DenseNet::Cache net;
    Vec sigma;
  };

  DenseNet net;
  Precond precond = Precond::Edm;
  double sigma_data = 0.5;

  int data_dim() const { return net.output_dim(); }

  /// Per-row noise levels; all must be positive.
  Mat forward(const Mat& x, const Vec& sigma, Cache* cache = nullptr) const;
  Mat forward(const Mat& x, double sigma) const;

  /// Adds dL/d(params) to `param_grad` (if non-null); returns dL/dx.
  Mat backward(const Cache& cache, const Mat& upstream, Vec* param_grad) const;
};

/// Net sized for `data_dim`-dimensional data: {data_dim + 1, hidden..., data_dim}.
Denoiser make_denoiser(int data_dim, const std::vector<int>& hidden, Precond precond,
                       double sigma_data, Rng& rng);

}  // namespace dsd::nn
