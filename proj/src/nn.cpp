#include "nwbrl/nn.hpp"

#include <cmath>

#include "nwbrl/error.hpp"

namespace nwbrl::nn {
namespace {

void activate(Matrix& x, Activation a) {
  if (a == Activation::ReLU) {
    x = x.cwiseMax(0.0);
  } else {
    x = x.array().tanh();
  }
}

ad::Var activate(ad::Var x, Activation a) {
  return a == Activation::ReLU ? ad::relu(x) : ad::tanh(x);
}

void layer_norm_rows(Matrix& x) {
  for (Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    x.row(i) = (x.row(i).array() - mu) / std::sqrt(var + kLayerNormEps);
  }
}

}  // namespace

MLP::MLP(MLPSpec spec, Init init, Rng& rng) : spec_(std::move(spec)) {
  require(spec_.in >= 1 && spec_.out >= 1, ErrorCode::InvalidArgument, "MLP: empty dimensions");
  std::vector<Index> dims{spec_.in};
  dims.insert(dims.end(), spec_.hidden.begin(), spec_.hidden.end());
  dims.push_back(spec_.out);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const Index fi = dims[l];
    const Index fo = dims[l + 1];
    Linear lin;
    lin.W.resize(fi, fo);
    lin.b = Matrix::Zero(1, fo);
    if (init == Init::VarianceScalingFanIn) {
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fi)));
      for (Index i = 0; i < lin.W.size(); ++i) lin.W.data()[i] = dist(rng);
    } else {
      const double a = std::sqrt(6.0 / static_cast<double>(fi + fo));
      std::uniform_real_distribution<double> dist(-a, a);
      for (Index i = 0; i < lin.W.size(); ++i) lin.W.data()[i] = dist(rng);
    }
    layers_.push_back(std::move(lin));
  }
}

Matrix MLP::eval(const Matrix& x) const {
  require(x.cols() == spec_.in, ErrorCode::DimensionMismatch, "MLP::eval: input width mismatch");
  Matrix h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Matrix z = h * layers_[l].W;
    z.rowwise() += layers_[l].b.row(0);
    const bool last = l + 1 == layers_.size();
    if (!last) {
      if (spec_.layer_norm) layer_norm_rows(z);
      activate(z, spec_.activation);
    } else if (spec_.out_activation) {
      activate(z, spec_.activation);
    }
    h = std::move(z);
  }
  return h;
}

ad::Var MLP::forward(ad::Tape& tape, ad::Var x, std::vector<ad::Var>& leaves) const {
  require(x.cols() == spec_.in, ErrorCode::DimensionMismatch,
          "MLP::forward: input width mismatch");
  ad::Var h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    ad::Var w = tape.leaf(layers_[l].W);
    ad::Var b = tape.leaf(layers_[l].b);
    leaves.push_back(w);
    leaves.push_back(b);
    ad::Var z = ad::add_row(ad::matmul(h, w), b);
    const bool last = l + 1 == layers_.size();
    if (!last) {
      if (spec_.layer_norm) z = ad::layer_norm(z, kLayerNormEps);
      z = activate(z, spec_.activation);
    } else if (spec_.out_activation) {
      z = activate(z, spec_.activation);
    }
    h = z;
  }
  return h;
}

std::vector<Matrix*> MLP::params() {
  std::vector<Matrix*> out;
  for (Linear& l : layers_) {
    out.push_back(&l.W);
    out.push_back(&l.b);
  }
  return out;
}

std::vector<const Matrix*> MLP::params() const {
  std::vector<const Matrix*> out;
  for (const Linear& l : layers_) {
    out.push_back(&l.W);
    out.push_back(&l.b);
  }
  return out;
}

std::size_t MLP::param_count() const {
  std::size_t n = 0;
  for (const Linear& l : layers_) n += static_cast<std::size_t>(l.W.size() + l.b.size());
  return n;
}

double global_norm(const std::vector<Matrix>& grads) {
  double s = 0.0;
  for (const Matrix& g : grads) s += g.squaredNorm();
  return std::sqrt(s);
}

Adam::Adam(double lr, std::optional<double> max_grad_norm, double beta1, double beta2,
           double eps)
    : lr_(lr), max_norm_(max_grad_norm), b1_(beta1), b2_(beta2), eps_(eps) {}

double Adam::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads) {
  require(params.size() == grads.size(), ErrorCode::DimensionMismatch,
          "Adam::step: parameter and gradient counts differ");
  if (m_.empty()) {
    for (const Matrix* p : params) {
      m_.push_back(Matrix::Zero(p->rows(), p->cols()));
      v_.push_back(Matrix::Zero(p->rows(), p->cols()));
    }
  }
  const double norm = global_norm(grads);
  double clip = 1.0;
  if (max_norm_ && norm > *max_norm_) clip = *max_norm_ / (norm + 1e-12);
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Matrix g = clip * grads[i];
    m_[i] = b1_ * m_[i] + (1.0 - b1_) * g;
    v_[i] = b2_ * v_[i] + (1.0 - b2_) * g.cwiseProduct(g);
    params[i]->array() -=
        lr_ * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
  return norm;
}

}  // namespace nwbrl::nn
