#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "prognet/rng.hpp"

namespace prognet::nn {

/// Mini-batch: one sample per column.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

class Layer {
 public:
  virtual ~Layer() = default;
  virtual std::string type() const = 0;
  virtual int in_size() const = 0;
  virtual int out_size() const = 0;

  virtual Mat forward(const Mat& x) const = 0;
  /// x/y are the cached forward input/output; accumulates parameter
  /// gradients into *grad (same length as weights()) and returns dx.
  virtual Mat backward(const Mat& x, const Mat& y, const Mat& dy,
                       Vec* grad) const = 0;

  virtual Vec& weights() { return empty_; }
  virtual const Vec& weights() const { return empty_; }
  virtual void init(Rng&) {}
  virtual std::unique_ptr<Layer> clone() const = 0;

 private:
  static Vec empty_;
};

std::unique_ptr<Layer> make_dense(int in, int out);
std::unique_ptr<Layer> make_conv2d(int channels_in, int height, int width,
                                   int channels_out, int kernel, int stride,
                                   int pad);
std::unique_ptr<Layer> make_upsample2x(int channels, int height, int width);
std::unique_ptr<Layer> make_leaky_relu(int size, double alpha = 0.2);
std::unique_ptr<Layer> make_tanh(int size);
std::unique_ptr<Layer> make_sigmoid(int size);

/// Dense 3D convolution on (C, D, H, W) feature volumes; used by the
/// super-resolution stage.
std::unique_ptr<Layer> make_conv3d(int channels_in, int depth, int height,
                                   int width, int channels_out, int kernel,
                                   int pad);

/// Per-invocation forward cache so one network can be applied several
/// times inside a single step (the generator runs once per age bin)
/// and each application can be backpropagated independently.
struct Tape {
  std::vector<Mat> inputs;
  Mat output;
};

using GradList = std::vector<Vec>;

class Net {
 public:
  Net() = default;
  Net(const Net& o);
  Net& operator=(const Net& o);
  Net(Net&&) = default;
  Net& operator=(Net&&) = default;

  void add(std::unique_ptr<Layer> layer);

  Mat forward(const Mat& x, Tape* tape = nullptr) const;
  /// Accumulates parameter gradients into *grads and returns d(input).
  Mat backward(const Tape& tape, const Mat& dy, GradList* grads) const;

  GradList zero_grads() const;
  int layer_count() const { return static_cast<int>(layers_.size()); }
  Layer& layer(int i) { return *layers_[static_cast<std::size_t>(i)]; }
  const Layer& layer(int i) const { return *layers_[static_cast<std::size_t>(i)]; }
  long total_params() const;
  int in_size() const;
  int out_size() const;

  void init(Rng& rng);

  /// Flatten / restore all weights (gradient checks, common init, hashing).
  Vec flat_weights() const;
  void set_flat_weights(const Vec& w);

  void save_weights(std::ostream& out) const;
  void load_weights(std::istream& in);

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

class Adam {
 public:
  Adam() = default;
  Adam(const Net& net, double lr, double beta1 = 0.5, double beta2 = 0.999,
       double eps = 1e-8);

  void step(Net& net, const GradList& grads);
  long steps_taken() const { return t_; }

  void save(std::ostream& out) const;
  void load(std::istream& in, const Net& net);

 private:
  double lr_ = 2e-4, b1_ = 0.5, b2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  std::vector<Vec> m_, v_;
};

/// Binary cross entropy with probabilities clamped to [1e-7, 1 - 1e-7].
/// Returns the loss; d_probs (optional) receives dLoss/dprob.
double bce_real_fake(const Eigen::ArrayXd& probs_real,
                     const Eigen::ArrayXd& probs_fake,
                     Eigen::ArrayXd* d_real = nullptr,
                     Eigen::ArrayXd* d_fake = nullptr);

/// Non-saturating generator objective -mean(log p); d_probs optional.
double nonsat_gen_loss(const Eigen::ArrayXd& probs_fake,
                       Eigen::ArrayXd* d_fake = nullptr);

}  // namespace prognet::nn
