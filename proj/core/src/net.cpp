#include "dsd/net.hpp"

#include <cmath>
#include <cstring>

#include "dsd/errors.hpp"

namespace dsd::nn {

namespace {

using ConstMatMap = Eigen::Map<const Mat>;
using MatMap = Eigen::Map<Mat>;

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

}  // namespace

double silu(double x) { return x / (1.0 + std::exp(-x)); }

double silu_grad(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

DenseNet::DenseNet(std::vector<int> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw PreconditionError("DenseNet: need at least input and output sizes");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    if (sizes_[l] < 1 || sizes_[l + 1] < 1) throw PreconditionError("DenseNet: layer sizes must be >= 1");
    offsets_.push_back(total);
    total += static_cast<Eigen::Index>(sizes_[l + 1]) * (sizes_[l] + 1);
  }
  params_ = Vec::Zero(total);
}

DenseNet DenseNet::random(std::vector<int> sizes, Rng& rng) {
  DenseNet net(std::move(sizes));
  for (int l = 0; l < net.layer_count(); ++l) {
    const int in = net.sizes_[l];
    const int out = net.sizes_[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    const Eigen::Index off = net.offsets_[l];
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(out) * (in + 1); ++i) {
      net.params_(off + i) = rng.uniform(-bound, bound);
    }
  }
  return net;
}

Mat DenseNet::forward(const Mat& x, Cache* cache) const {
  if (x.cols() != input_dim()) {
    throw PreconditionError("DenseNet::forward: input has " + std::to_string(x.cols()) +
                            " columns, expected " + std::to_string(input_dim()));
  }
  if (cache) {
    cache->inputs.clear();
    cache->pre.clear();
  }
  Mat h = x;
  for (int l = 0; l < layer_count(); ++l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    const double* base = params_.data() + offsets_[l];
    ConstMatMap w(base, out, in);
    Eigen::Map<const Eigen::RowVectorXd> b(base + static_cast<Eigen::Index>(out) * in, out);
    Mat z = h * w.transpose();
    z.rowwise() += b;
    if (cache) cache->inputs.push_back(std::move(h));
    if (l + 1 == layer_count()) return z;
    h = z.unaryExpr([](double v) { return silu(v); });
    if (cache) cache->pre.push_back(std::move(z));
  }
  return h;  // unreachable: layer_count() >= 1
}

Mat DenseNet::backward(const Cache& cache, const Mat& upstream, Vec* param_grad) const {
  if (static_cast<int>(cache.inputs.size()) != layer_count()) {
    throw PreconditionError("DenseNet::backward: cache does not match this net");
  }
  if (upstream.cols() != output_dim() || upstream.rows() != cache.inputs.front().rows()) {
    throw PreconditionError("DenseNet::backward: upstream shape mismatch");
  }
  if (param_grad && param_grad->size() != params_.size()) {
    throw PreconditionError("DenseNet::backward: gradient buffer has wrong size");
  }
  Mat dz = upstream;
  for (int l = layer_count() - 1; l >= 0; --l) {
    const int in = sizes_[l];
    const int out = sizes_[l + 1];
    if (l + 1 < layer_count()) {
      dz.array() *= cache.pre[l].unaryExpr([](double v) { return silu_grad(v); }).array();
    }
    if (param_grad) {
      double* gbase = param_grad->data() + offsets_[l];
      MatMap gw(gbase, out, in);
      gw.noalias() += dz.transpose() * cache.inputs[l];
      Eigen::Map<Eigen::RowVectorXd> gb(gbase + static_cast<Eigen::Index>(out) * in, out);
      gb += dz.colwise().sum();
    }
    ConstMatMap w(params_.data() + offsets_[l], out, in);
    dz = dz * w;
  }
  return dz;
}

std::uint64_t DenseNet::hash() const {
  std::uint64_t h = kFnvOffset;
  for (int s : sizes_) h = fnv_bytes(h, &s, sizeof s);
  return fnv_bytes(h, params_.data(), sizeof(double) * static_cast<std::size_t>(params_.size()));
}

void Adam::step(Vec& params, const Vec& grad) {
  if (grad.size() != params.size()) throw PreconditionError("Adam::step: gradient size mismatch");
  if (m.size() != params.size()) {
    m = Vec::Zero(params.size());
    v = Vec::Zero(params.size());
    t = 0;
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  const double step = lr / c1;
  const double root_c2 = std::sqrt(c2);
  params.array() -= step * m.array() / (v.array().sqrt() / root_c2 + eps);
}

std::string to_string(Precond p) { return p == Precond::Edm ? "edm" : "none"; }

Precond precond_from_string(const std::string& s) {
  if (s == "edm") return Precond::Edm;
  if (s == "none") return Precond::None;
  throw ConfigError("unknown preconditioning '" + s + "' (expected edm or none)");
}

Mat Denoiser::forward(const Mat& x, const Vec& sigma, Cache* cache) const {
  const int d = data_dim();
  if (x.cols() != d || net.input_dim() != d + 1) {
    throw PreconditionError("Denoiser::forward: dimension mismatch");
  }
  if (sigma.size() != x.rows()) throw PreconditionError("Denoiser::forward: one sigma per row required");
  Mat in(x.rows(), d + 1);
  Vec skip(x.rows()), out_scale(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double s = sigma(i);
    if (!(s > 0.0)) throw DomainError("Denoiser::forward: sigma must be positive");
    double c_in = 1.0;
    skip(i) = 0.0;
    out_scale(i) = 1.0;
    if (precond == Precond::Edm) {
      const double sd2 = sigma_data * sigma_data;
      const double norm = std::sqrt(s * s + sd2);
      c_in = 1.0 / norm;
      skip(i) = sd2 / (s * s + sd2);
      out_scale(i) = s * sigma_data / norm;
    }
    in.row(i).head(d) = c_in * x.row(i);
    in(i, d) = std::log(s) / 4.0;
  }
  DenseNet::Cache local;
  Mat raw = net.forward(in, cache ? &cache->net : &local);
  if (cache) cache->sigma = sigma;
  if (precond == Precond::None) return raw;
  return (raw.array().colwise() * out_scale.array()).matrix() +
         (x.array().colwise() * skip.array()).matrix();
}

Mat Denoiser::forward(const Mat& x, double sigma) const {
  return forward(x, Vec::Constant(x.rows(), sigma));
}

Mat Denoiser::backward(const Cache& cache, const Mat& upstream, Vec* param_grad) const {
  const int d = data_dim();
  if (precond == Precond::None) {
    return net.backward(cache.net, upstream, param_grad).leftCols(d);
  }
  const double sd2 = sigma_data * sigma_data;
  Mat up_net = upstream;
  Vec skip(upstream.rows()), c_in(upstream.rows());
  for (Eigen::Index i = 0; i < upstream.rows(); ++i) {
    const double s = cache.sigma(i);
    const double norm = std::sqrt(s * s + sd2);
    up_net.row(i) *= s * sigma_data / norm;
    skip(i) = sd2 / (s * s + sd2);
    c_in(i) = 1.0 / norm;
  }
  const Mat din = net.backward(cache.net, up_net, param_grad);
  return (din.leftCols(d).array().colwise() * c_in.array()).matrix() +
         (upstream.array().colwise() * skip.array()).matrix();
}

Denoiser make_denoiser(int data_dim, const std::vector<int>& hidden, Precond precond,
                       double sigma_data, Rng& rng) {
  std::vector<int> sizes{data_dim + 1};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(data_dim);
  Denoiser den;
  den.net = DenseNet::random(std::move(sizes), rng);
  den.precond = precond;
  den.sigma_data = sigma_data;
  if (precond == Precond::Edm && !(sigma_data > 0.0)) {
    throw PreconditionError("make_denoiser: sigma_data must be positive for edm preconditioning");
  }
  return den;
}

}  // namespace dsd::nn
