#include "prognet/nn.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "prognet/errors.hpp"

namespace prognet::nn {

Vec Layer::empty_;

namespace {

constexpr double kProbClamp = 1e-7;

void xavier_init(Vec& w, int fan_in, int fan_out, int weight_count, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (int i = 0; i < weight_count; ++i) w[i] = rng.uniform(-bound, bound);
  for (int i = weight_count; i < w.size(); ++i) w[i] = 0.0;  // biases
}

class Dense final : public Layer {
 public:
  Dense(int in, int out) : in_(in), out_(out) {
    w_ = Vec::Zero(static_cast<long>(in) * out + out);
  }
  std::string type() const override { return "dense"; }
  int in_size() const override { return in_; }
  int out_size() const override { return out_; }
  Vec& weights() override { return w_; }
  const Vec& weights() const override { return w_; }
  void init(Rng& rng) override { xavier_init(w_, in_, out_, in_ * out_, rng); }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Dense>(*this);
  }

  Mat forward(const Mat& x) const override {
    Eigen::Map<const Mat> W(w_.data(), out_, in_);
    Eigen::Map<const Vec> b(w_.data() + static_cast<long>(in_) * out_, out_);
    Mat y = W * x;
    y.colwise() += b;
    return y;
  }

  Mat backward(const Mat& x, const Mat&, const Mat& dy,
               Vec* grad) const override {
    Eigen::Map<const Mat> W(w_.data(), out_, in_);
    if (grad) {
      Eigen::Map<Mat> dW(grad->data(), out_, in_);
      Eigen::Map<Vec> db(grad->data() + static_cast<long>(in_) * out_, out_);
      dW.noalias() += dy * x.transpose();
      db += dy.rowwise().sum();
    }
    return W.transpose() * dy;
  }

 private:
  int in_, out_;
  Vec w_;
};

class Conv2d final : public Layer {
 public:
  Conv2d(int cin, int h, int w, int cout, int k, int stride, int pad)
      : cin_(cin), h_(h), w_(w), cout_(cout), k_(k), stride_(stride), pad_(pad) {
    ho_ = (h_ + 2 * pad_ - k_) / stride_ + 1;
    wo_ = (w_ + 2 * pad_ - k_) / stride_ + 1;
    if (ho_ < 1 || wo_ < 1)
      throw ValidationError("conv2d output collapses to zero size");
    w_vec_ = Vec::Zero(static_cast<long>(cout_) * cin_ * k_ * k_ + cout_);
  }
  std::string type() const override { return "conv2d"; }
  int in_size() const override { return cin_ * h_ * w_; }
  int out_size() const override { return cout_ * ho_ * wo_; }
  Vec& weights() override { return w_vec_; }
  const Vec& weights() const override { return w_vec_; }
  void init(Rng& rng) override {
    xavier_init(w_vec_, cin_ * k_ * k_, cout_, cout_ * cin_ * k_ * k_, rng);
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Conv2d>(*this);
  }

  Mat forward(const Mat& x) const override {
    const int patch = cin_ * k_ * k_;
    const int opix = ho_ * wo_;
    Eigen::Map<const Mat> W(w_vec_.data(), cout_, patch);
    Eigen::Map<const Vec> b(w_vec_.data() + static_cast<long>(cout_) * patch,
                            cout_);
    Mat y(static_cast<long>(cout_) * opix, x.cols());
    Mat col(patch, opix);
    for (long s = 0; s < x.cols(); ++s) {
      im2col(x.col(s).data(), col);
      // (opix x cout) col-major == channel planes contiguous in the column
      Eigen::Map<Mat> ys(y.col(s).data(), opix, cout_);
      ys.noalias() = col.transpose() * W.transpose();
      ys.rowwise() += b.transpose();
    }
    return y;
  }

  Mat backward(const Mat& x, const Mat&, const Mat& dy,
               Vec* grad) const override {
    const int patch = cin_ * k_ * k_;
    const int opix = ho_ * wo_;
    Eigen::Map<const Mat> W(w_vec_.data(), cout_, patch);
    Mat dx = Mat::Zero(x.rows(), x.cols());
    Mat col(patch, opix), dcol(patch, opix);
    for (long s = 0; s < x.cols(); ++s) {
      im2col(x.col(s).data(), col);
      Eigen::Map<const Mat> dys(dy.col(s).data(), opix, cout_);
      if (grad) {
        Eigen::Map<Mat> dW(grad->data(), cout_, patch);
        Eigen::Map<Vec> db(grad->data() + static_cast<long>(cout_) * patch,
                           cout_);
        dW.noalias() += dys.transpose() * col.transpose();
        db += dys.colwise().sum().transpose();
      }
      dcol.noalias() = W.transpose() * dys.transpose();
      col2im(dcol, dx.col(s).data());
    }
    return dx;
  }

 private:
  void im2col(const double* xs, Mat& col) const {
    col.setZero();
    for (int c = 0; c < cin_; ++c) {
      const double* plane = xs + static_cast<long>(c) * h_ * w_;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const int row = (c * k_ + ky) * k_ + kx;
          for (int oy = 0; oy < ho_; ++oy) {
            const int iy = oy * stride_ + ky - pad_;
            if (iy < 0 || iy >= h_) continue;
            for (int ox = 0; ox < wo_; ++ox) {
              const int ix = ox * stride_ + kx - pad_;
              if (ix < 0 || ix >= w_) continue;
              col(row, oy * wo_ + ox) = plane[iy * w_ + ix];
            }
          }
        }
      }
    }
  }

  void col2im(const Mat& dcol, double* dxs) const {
    for (int c = 0; c < cin_; ++c) {
      double* plane = dxs + static_cast<long>(c) * h_ * w_;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const int row = (c * k_ + ky) * k_ + kx;
          for (int oy = 0; oy < ho_; ++oy) {
            const int iy = oy * stride_ + ky - pad_;
            if (iy < 0 || iy >= h_) continue;
            for (int ox = 0; ox < wo_; ++ox) {
              const int ix = ox * stride_ + kx - pad_;
              if (ix < 0 || ix >= w_) continue;
              plane[iy * w_ + ix] += dcol(row, oy * wo_ + ox);
            }
          }
        }
      }
    }
  }

  int cin_, h_, w_, cout_, k_, stride_, pad_, ho_, wo_;
  Vec w_vec_;
};

class Conv3d final : public Layer {
 public:
  Conv3d(int cin, int d, int h, int w, int cout, int k, int pad)
      : cin_(cin), d_(d), h_(h), w_(w), cout_(cout), k_(k), pad_(pad) {
    do_ = d_ + 2 * pad_ - k_ + 1;
    ho_ = h_ + 2 * pad_ - k_ + 1;
    wo_ = w_ + 2 * pad_ - k_ + 1;
    if (do_ < 1 || ho_ < 1 || wo_ < 1)
      throw ValidationError("conv3d output collapses to zero size");
    w_vec_ = Vec::Zero(static_cast<long>(cout_) * cin_ * k_ * k_ * k_ + cout_);
  }
  std::string type() const override { return "conv3d"; }
  int in_size() const override { return cin_ * d_ * h_ * w_; }
  int out_size() const override { return cout_ * do_ * ho_ * wo_; }
  Vec& weights() override { return w_vec_; }
  const Vec& weights() const override { return w_vec_; }
  void init(Rng& rng) override {
    xavier_init(w_vec_, cin_ * k_ * k_ * k_, cout_,
                cout_ * cin_ * k_ * k_ * k_, rng);
  }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Conv3d>(*this);
  }

  Mat forward(const Mat& x) const override {
    const int patch = cin_ * k_ * k_ * k_;
    const int opix = do_ * ho_ * wo_;
    Eigen::Map<const Mat> W(w_vec_.data(), cout_, patch);
    Eigen::Map<const Vec> b(w_vec_.data() + static_cast<long>(cout_) * patch,
                            cout_);
    Mat y(static_cast<long>(cout_) * opix, x.cols());
    Mat col(patch, opix);
    for (long s = 0; s < x.cols(); ++s) {
      im2col(x.col(s).data(), col);
      Eigen::Map<Mat> ys(y.col(s).data(), opix, cout_);
      ys.noalias() = col.transpose() * W.transpose();
      ys.rowwise() += b.transpose();
    }
    return y;
  }

  Mat backward(const Mat& x, const Mat&, const Mat& dy,
               Vec* grad) const override {
    const int patch = cin_ * k_ * k_ * k_;
    const int opix = do_ * ho_ * wo_;
    Eigen::Map<const Mat> W(w_vec_.data(), cout_, patch);
    Mat dx = Mat::Zero(x.rows(), x.cols());
    Mat col(patch, opix), dcol(patch, opix);
    for (long s = 0; s < x.cols(); ++s) {
      im2col(x.col(s).data(), col);
      Eigen::Map<const Mat> dys(dy.col(s).data(), opix, cout_);
      if (grad) {
        Eigen::Map<Mat> dW(grad->data(), cout_, patch);
        Eigen::Map<Vec> db(grad->data() + static_cast<long>(cout_) * patch,
                           cout_);
        dW.noalias() += dys.transpose() * col.transpose();
        db += dys.colwise().sum().transpose();
      }
      dcol.noalias() = W.transpose() * dys.transpose();
      col2im(dcol, dx.col(s).data());
    }
    return dx;
  }

 private:
  void im2col(const double* xs, Mat& col) const {
    col.setZero();
    for (int c = 0; c < cin_; ++c) {
      const double* vol = xs + static_cast<long>(c) * d_ * h_ * w_;
      for (int kz = 0; kz < k_; ++kz)
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx) {
            const int row = ((c * k_ + kz) * k_ + ky) * k_ + kx;
            for (int oz = 0; oz < do_; ++oz) {
              const int iz = oz + kz - pad_;
              if (iz < 0 || iz >= d_) continue;
              for (int oy = 0; oy < ho_; ++oy) {
                const int iy = oy + ky - pad_;
                if (iy < 0 || iy >= h_) continue;
                for (int ox = 0; ox < wo_; ++ox) {
                  const int ix = ox + kx - pad_;
                  if (ix < 0 || ix >= w_) continue;
                  col(row, (oz * ho_ + oy) * wo_ + ox) =
                      vol[(static_cast<long>(iz) * h_ + iy) * w_ + ix];
                }
              }
            }
          }
    }
  }

  void col2im(const Mat& dcol, double* dxs) const {
    for (int c = 0; c < cin_; ++c) {
      double* vol = dxs + static_cast<long>(c) * d_ * h_ * w_;
      for (int kz = 0; kz < k_; ++kz)
        for (int ky = 0; ky < k_; ++ky)
          for (int kx = 0; kx < k_; ++kx) {
            const int row = ((c * k_ + kz) * k_ + ky) * k_ + kx;
            for (int oz = 0; oz < do_; ++oz) {
              const int iz = oz + kz - pad_;
              if (iz < 0 || iz >= d_) continue;
              for (int oy = 0; oy < ho_; ++oy) {
                const int iy = oy + ky - pad_;
                if (iy < 0 || iy >= h_) continue;
                for (int ox = 0; ox < wo_; ++ox) {
                  const int ix = ox + kx - pad_;
                  if (ix < 0 || ix >= w_) continue;
                  vol[(static_cast<long>(iz) * h_ + iy) * w_ + ix] +=
                      dcol(row, (oz * ho_ + oy) * wo_ + ox);
                }
              }
            }
          }
    }
  }

  int cin_, d_, h_, w_, cout_, k_, pad_, do_, ho_, wo_;
  Vec w_vec_;
};

class Upsample2x final : public Layer {
 public:
  Upsample2x(int c, int h, int w) : c_(c), h_(h), w_(w) {}
  std::string type() const override { return "upsample2x"; }
  int in_size() const override { return c_ * h_ * w_; }
  int out_size() const override { return c_ * 4 * h_ * w_; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<Upsample2x>(*this);
  }

  Mat forward(const Mat& x) const override {
    Mat y(static_cast<long>(out_size()), x.cols());
    const int H = 2 * h_, W = 2 * w_;
    for (long s = 0; s < x.cols(); ++s) {
      const double* xs = x.col(s).data();
      double* ys = y.col(s).data();
      for (int c = 0; c < c_; ++c)
        for (int yy = 0; yy < H; ++yy)
          for (int xx = 0; xx < W; ++xx)
            ys[(static_cast<long>(c) * H + yy) * W + xx] =
                xs[(static_cast<long>(c) * h_ + yy / 2) * w_ + xx / 2];
    }
    return y;
  }

  Mat backward(const Mat& x, const Mat&, const Mat& dy,
               Vec*) const override {
    Mat dx = Mat::Zero(x.rows(), x.cols());
    const int H = 2 * h_, W = 2 * w_;
    for (long s = 0; s < x.cols(); ++s) {
      const double* dys = dy.col(s).data();
      double* dxs = dx.col(s).data();
      for (int c = 0; c < c_; ++c)
        for (int yy = 0; yy < H; ++yy)
          for (int xx = 0; xx < W; ++xx)
            dxs[(static_cast<long>(c) * h_ + yy / 2) * w_ + xx / 2] +=
                dys[(static_cast<long>(c) * H + yy) * W + xx];
    }
    return dx;
  }

 private:
  int c_, h_, w_;
};

class LeakyRelu final : public Layer {
 public:
  LeakyRelu(int size, double alpha) : size_(size), alpha_(alpha) {}
  std::string type() const override { return "leaky_relu"; }
  int in_size() const override { return size_; }
  int out_size() const override { return size_; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<LeakyRelu>(*this);
  }
  Mat forward(const Mat& x) const override {
    return x.array().max(0.0).matrix() + alpha_ * x.array().min(0.0).matrix();
  }
  Mat backward(const Mat& x, const Mat&, const Mat& dy, Vec*) const override {
    return (x.array() > 0.0).select(dy.array(), alpha_ * dy.array());
  }

 private:
  int size_;
  double alpha_;
};

class TanhAct final : public Layer {
 public:
  explicit TanhAct(int size) : size_(size) {}
  std::string type() const override { return "tanh"; }
  int in_size() const override { return size_; }
  int out_size() const override { return size_; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<TanhAct>(*this);
  }
  Mat forward(const Mat& x) const override { return x.array().tanh(); }
  Mat backward(const Mat&, const Mat& y, const Mat& dy, Vec*) const override {
    return (dy.array() * (1.0 - y.array().square())).matrix();
  }

 private:
  int size_;
};

class SigmoidAct final : public Layer {
 public:
  explicit SigmoidAct(int size) : size_(size) {}
  std::string type() const override { return "sigmoid"; }
  int in_size() const override { return size_; }
  int out_size() const override { return size_; }
  std::unique_ptr<Layer> clone() const override {
    return std::make_unique<SigmoidAct>(*this);
  }
  Mat forward(const Mat& x) const override {
    return (1.0 / (1.0 + (-x.array()).exp())).matrix();
  }
  Mat backward(const Mat&, const Mat& y, const Mat& dy, Vec*) const override {
    return (dy.array() * y.array() * (1.0 - y.array())).matrix();
  }

 private:
  int size_;
};

}  // namespace

std::unique_ptr<Layer> make_dense(int in, int out) {
  return std::make_unique<Dense>(in, out);
}
std::unique_ptr<Layer> make_conv2d(int cin, int h, int w, int cout, int k,
                                   int stride, int pad) {
  return std::make_unique<Conv2d>(cin, h, w, cout, k, stride, pad);
}
std::unique_ptr<Layer> make_conv3d(int cin, int d, int h, int w, int cout,
                                   int k, int pad) {
  return std::make_unique<Conv3d>(cin, d, h, w, cout, k, pad);
}
std::unique_ptr<Layer> make_upsample2x(int c, int h, int w) {
  return std::make_unique<Upsample2x>(c, h, w);
}
std::unique_ptr<Layer> make_leaky_relu(int size, double alpha) {
  return std::make_unique<LeakyRelu>(size, alpha);
}
std::unique_ptr<Layer> make_tanh(int size) {
  return std::make_unique<TanhAct>(size);
}
std::unique_ptr<Layer> make_sigmoid(int size) {
  return std::make_unique<SigmoidAct>(size);
}

Net::Net(const Net& o) {
  layers_.reserve(o.layers_.size());
  for (const auto& l : o.layers_) layers_.push_back(l->clone());
}

Net& Net::operator=(const Net& o) {
  if (this != &o) {
    layers_.clear();
    layers_.reserve(o.layers_.size());
    for (const auto& l : o.layers_) layers_.push_back(l->clone());
  }
  return *this;
}

void Net::add(std::unique_ptr<Layer> layer) {
  if (!layers_.empty() && layers_.back()->out_size() != layer->in_size())
    throw ValidationError("layer size mismatch: " + layers_.back()->type() +
                          " out " + std::to_string(layers_.back()->out_size()) +
                          " vs " + layer->type() + " in " +
                          std::to_string(layer->in_size()));
  layers_.push_back(std::move(layer));
}

Mat Net::forward(const Mat& x, Tape* tape) const {
  if (tape) {
    tape->inputs.clear();
    tape->inputs.reserve(layers_.size());
  }
  Mat cur = x;
  for (const auto& l : layers_) {
    if (tape) tape->inputs.push_back(cur);
    cur = l->forward(cur);
  }
  if (tape) tape->output = cur;
  return cur;
}

Mat Net::backward(const Tape& tape, const Mat& dy, GradList* grads) const {
  Mat cur = dy;
  for (int i = static_cast<int>(layers_.size()) - 1; i >= 0; --i) {
    const Mat& x = tape.inputs[static_cast<std::size_t>(i)];
    const Mat& y = i + 1 < static_cast<int>(layers_.size())
                       ? tape.inputs[static_cast<std::size_t>(i) + 1]
                       : tape.output;
    Vec* g = grads ? &(*grads)[static_cast<std::size_t>(i)] : nullptr;
    cur = layers_[static_cast<std::size_t>(i)]->backward(x, y, cur, g);
  }
  return cur;
}

GradList Net::zero_grads() const {
  GradList grads;
  grads.reserve(layers_.size());
  for (const auto& l : layers_) grads.push_back(Vec::Zero(l->weights().size()));
  return grads;
}

long Net::total_params() const {
  long n = 0;
  for (const auto& l : layers_) n += l->weights().size();
  return n;
}

int Net::in_size() const { return layers_.front()->in_size(); }
int Net::out_size() const { return layers_.back()->out_size(); }

void Net::init(Rng& rng) {
  for (auto& l : layers_) l->init(rng);
}

Vec Net::flat_weights() const {
  Vec out(total_params());
  long at = 0;
  for (const auto& l : layers_) {
    out.segment(at, l->weights().size()) = l->weights();
    at += l->weights().size();
  }
  return out;
}

void Net::set_flat_weights(const Vec& w) {
  if (w.size() != total_params())
    throw ValidationError("flat weight size mismatch");
  long at = 0;
  for (auto& l : layers_) {
    l->weights() = w.segment(at, l->weights().size());
    at += l->weights().size();
  }
}

void Net::save_weights(std::ostream& out) const {
  const Vec w = flat_weights();
  const std::uint64_t n = static_cast<std::uint64_t>(w.size());
  out.write(reinterpret_cast<const char*>(&n), sizeof(n));
  out.write(reinterpret_cast<const char*>(w.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
}

void Net::load_weights(std::istream& in) {
  std::uint64_t n = 0;
  in.read(reinterpret_cast<char*>(&n), sizeof(n));
  if (!in || n != static_cast<std::uint64_t>(total_params()))
    throw IoError("weight blob does not match network architecture");
  Vec w(static_cast<long>(n));
  in.read(reinterpret_cast<char*>(w.data()),
          static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) throw IoError("truncated weight blob");
  set_flat_weights(w);
}

Adam::Adam(const Net& net, double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (int i = 0; i < net.layer_count(); ++i) {
    m_.push_back(Vec::Zero(net.layer(i).weights().size()));
    v_.push_back(Vec::Zero(net.layer(i).weights().size()));
  }
}

void Adam::step(Net& net, const GradList& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (int i = 0; i < net.layer_count(); ++i) {
    Vec& w = net.layer(i).weights();
    if (w.size() == 0) continue;
    auto& m = m_[static_cast<std::size_t>(i)];
    auto& v = v_[static_cast<std::size_t>(i)];
    const Vec& g = grads[static_cast<std::size_t>(i)];
    m = b1_ * m + (1.0 - b1_) * g;
    v = b2_ * v + (1.0 - b2_) * g.cwiseProduct(g);
    w.array() -= lr_ * (m.array() / bc1) /
                 ((v.array() / bc2).sqrt() + eps_);
  }
}

void Adam::save(std::ostream& out) const {
  out.write(reinterpret_cast<const char*>(&t_), sizeof(t_));
  const std::uint64_t layers = m_.size();
  out.write(reinterpret_cast<const char*>(&layers), sizeof(layers));
  for (std::size_t i = 0; i < m_.size(); ++i) {
    const std::uint64_t n = static_cast<std::uint64_t>(m_[i].size());
    out.write(reinterpret_cast<const char*>(&n), sizeof(n));
    out.write(reinterpret_cast<const char*>(m_[i].data()),
              static_cast<std::streamsize>(n * sizeof(double)));
    out.write(reinterpret_cast<const char*>(v_[i].data()),
              static_cast<std::streamsize>(n * sizeof(double)));
  }
}

void Adam::load(std::istream& in, const Net& net) {
  in.read(reinterpret_cast<char*>(&t_), sizeof(t_));
  std::uint64_t layers = 0;
  in.read(reinterpret_cast<char*>(&layers), sizeof(layers));
  if (!in || layers != static_cast<std::uint64_t>(net.layer_count()))
    throw IoError("optimizer state does not match network");
  m_.assign(layers, Vec());
  v_.assign(layers, Vec());
  for (std::size_t i = 0; i < layers; ++i) {
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), sizeof(n));
    m_[i] = Vec(static_cast<long>(n));
    v_[i] = Vec(static_cast<long>(n));
    in.read(reinterpret_cast<char*>(m_[i].data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    in.read(reinterpret_cast<char*>(v_[i].data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!in) throw IoError("truncated optimizer state");
  }
}

double bce_real_fake(const Eigen::ArrayXd& probs_real,
                     const Eigen::ArrayXd& probs_fake, Eigen::ArrayXd* d_real,
                     Eigen::ArrayXd* d_fake) {
  const long nr = probs_real.size(), nf = probs_fake.size();
  if (d_real) *d_real = Eigen::ArrayXd::Zero(nr);
  if (d_fake) *d_fake = Eigen::ArrayXd::Zero(nf);
  double loss = 0.0;
  for (long i = 0; i < nr; ++i) {
    const double p =
        std::clamp(probs_real[i], kProbClamp, 1.0 - kProbClamp);
    loss += -std::log(p) / static_cast<double>(nr);
    if (d_real && probs_real[i] > kProbClamp && probs_real[i] < 1.0 - kProbClamp)
      (*d_real)[i] = -1.0 / (p * static_cast<double>(nr));
  }
  for (long i = 0; i < nf; ++i) {
    const double p =
        std::clamp(probs_fake[i], kProbClamp, 1.0 - kProbClamp);
    loss += -std::log(1.0 - p) / static_cast<double>(nf);
    if (d_fake && probs_fake[i] > kProbClamp && probs_fake[i] < 1.0 - kProbClamp)
      (*d_fake)[i] = 1.0 / ((1.0 - p) * static_cast<double>(nf));
  }
  return loss;
}

double nonsat_gen_loss(const Eigen::ArrayXd& probs_fake,
                       Eigen::ArrayXd* d_fake) {
  const long n = probs_fake.size();
  if (d_fake) *d_fake = Eigen::ArrayXd::Zero(n);
  double loss = 0.0;
  for (long i = 0; i < n; ++i) {
    const double p =
        std::clamp(probs_fake[i], kProbClamp, 1.0 - kProbClamp);
    loss += -std::log(p) / static_cast<double>(n);
    if (d_fake && probs_fake[i] > kProbClamp && probs_fake[i] < 1.0 - kProbClamp)
      (*d_fake)[i] = -1.0 / (p * static_cast<double>(n));
  }
  return loss;
}

}  // namespace prognet::nn
