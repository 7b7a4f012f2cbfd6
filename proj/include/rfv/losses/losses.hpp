#pragma once

#include <algorithm>
#include <span>
#include <vector>

#include "rfv/core/convnet.hpp"
#include "rfv/core/mask.hpp"

namespace rfv::loss {

struct LossConfig {
  double margin = 10.0;
  /// Treat the images y and u as constants: no gradient reaches their pixels or the generator.
  bool stop_gradient_on_generated = true;
  /// Also treat F(y) and F(u) as constants, so parameters get no gradient through them.
  bool stop_gradient_features = false;

  void validate() const {
    if (!(margin > 0.0))
      throw ConfigError("loss margin must be positive");
  }
};

struct GradRequest {
  bool parameters = true;
  bool inputs = false;
};

/// Batch value of L(x, y, t, u) = ||F(x)-F(y)||^2 + max(m - ||F(t)-F(u)||^2, 0), averaged over
/// columns. Squared distances throughout; the hinge is inactive when the negative distance equals m.
/// grad_y / grad_u stay zero under either stop-gradient flag.
template <typename Scalar> struct TwoPairResult {
  double loss = 0.0;
  Vector<double> per_unit;
  Vector<double> positive; // ||F(x) - F(y)||^2
  Vector<double> negative; // ||F(t) - F(u)||^2
  NetParameters<Scalar> param_grad;
  Matrix<Scalar> grad_x, grad_y, grad_t, grad_u; // d(mean loss)/d(pixels), same layout as inputs
};

namespace detail {

template <typename Scalar>
Vector<double> squared_distances(const Matrix<Scalar> &a, const Matrix<Scalar> &b) {
  return (a.template cast<double>() - b.template cast<double>()).colwise().squaredNorm().transpose();
}

template <typename Scalar>
void backprop(const ConvNet<Scalar> &net, const typename ConvNet<Scalar>::Tape &tape, const Matrix<Scalar> &grad_emb,
              const GradRequest &req, NetParameters<Scalar> &param_grad, Matrix<Scalar> &input_grad,
              Eigen::Index input_rows) {
  if (!req.parameters && !req.inputs) {
    input_grad = Matrix<Scalar>::Zero(input_rows, grad_emb.cols());
    return;
  }
  net.backward(tape, grad_emb, req.parameters ? &param_grad : nullptr, req.inputs ? &input_grad : nullptr);
  if (!req.inputs)
    input_grad = Matrix<Scalar>::Zero(input_rows, grad_emb.cols());
}

} // namespace detail

template <typename Scalar>
TwoPairResult<Scalar> two_pair_loss(const ConvNet<Scalar> &net, const Matrix<Scalar> &x, const Matrix<Scalar> &y,
                                    const Matrix<Scalar> &t, const Matrix<Scalar> &u, const LossConfig &cfg,
                                    const GradRequest &req = {}) {
  cfg.validate();
  const Eigen::Index n = x.cols();
  if (y.cols() != n || t.cols() != n || u.cols() != n)
    throw ShapeError("two_pair_loss needs the same number of x, y, t, u columns");
  using Tape = typename ConvNet<Scalar>::Tape;
  const GradRequest gen_req{req.parameters && !cfg.stop_gradient_features,
                            req.inputs && !cfg.stop_gradient_on_generated && !cfg.stop_gradient_features};
  const bool grad_generated = gen_req.parameters || gen_req.inputs;
  Tape tx, ty, tt, tu;
  const Matrix<Scalar> ex = net.forward(x, &tx);
  const Matrix<Scalar> et = net.forward(t, &tt);
  const Matrix<Scalar> ey = net.forward(y, grad_generated ? &ty : nullptr);
  const Matrix<Scalar> eu = net.forward(u, grad_generated ? &tu : nullptr);

  TwoPairResult<Scalar> r;
  r.positive = detail::squared_distances(ex, ey);
  r.negative = detail::squared_distances(et, eu);
  r.per_unit = r.positive + (cfg.margin - r.negative.array()).max(0.0).matrix();
  r.loss = n > 0 ? r.per_unit.mean() : 0.0;

  r.param_grad = net.parameters().zeros_like();
  const Scalar inv_n = n > 0 ? Scalar(1) / static_cast<Scalar>(n) : Scalar(0);
  const Matrix<Scalar> g_pos = Scalar(2) * inv_n * (ex - ey);
  Matrix<Scalar> g_neg = Scalar(2) * inv_n * (et - eu);
  for (Eigen::Index i = 0; i < n; ++i)
    if (!(cfg.margin - r.negative[i] > 0.0))
      g_neg.col(i).setZero();

  detail::backprop(net, tx, g_pos, req, r.param_grad, r.grad_x, x.rows());
  const Matrix<Scalar> g_t = -g_neg;
  detail::backprop(net, tt, g_t, req, r.param_grad, r.grad_t, t.rows());
  if (grad_generated) {
    const Matrix<Scalar> g_y = -g_pos;
    detail::backprop(net, ty, g_y, gen_req, r.param_grad, r.grad_y, y.rows());
    detail::backprop(net, tu, g_neg, gen_req, r.param_grad, r.grad_u, u.rows());
  } else {
    r.grad_y = Matrix<Scalar>::Zero(y.rows(), n);
    r.grad_u = Matrix<Scalar>::Zero(u.rows(), n);
  }
  return r;
}

/// Two-pair loss with u replaced by the real positive y. `grad_y` then holds the total
/// gradient through both of y's roles and `grad_u` is zero.
template <typename Scalar>
TwoPairResult<Scalar> weak_at_loss(const ConvNet<Scalar> &net, const Matrix<Scalar> &x, const Matrix<Scalar> &y,
                                   const Matrix<Scalar> &t, const LossConfig &cfg, const GradRequest &req = {}) {
  auto r = two_pair_loss(net, x, y, t, y, cfg, req);
  r.grad_y += r.grad_u;
  r.grad_u.setZero();
  return r;
}

/// Expands per-column pixel masks to a (C*H*W) x N matrix of 0/1 multipliers.
template <typename Scalar> Matrix<Scalar> mask_matrix(std::span<const Mask> masks, int channels) {
  if (masks.empty())
    return {};
  const auto plane = static_cast<Eigen::Index>(masks.front().grid().size());
  Matrix<Scalar> out = Matrix<Scalar>::Zero(plane * channels, static_cast<Eigen::Index>(masks.size()));
  for (std::size_t i = 0; i < masks.size(); ++i)
    for (int c = 0; c < channels; ++c)
      for (Eigen::Index p = 0; p < plane; ++p)
        if (masks[i].grid()[static_cast<std::size_t>(p)])
          out(c * plane + p, static_cast<Eigen::Index>(i)) = Scalar(1);
  return out;
}

/// The two inner problems of the robust objective, per column:
///   maximize_term = ||F(x + M_x * delta_x) - sg(F(y))||^2   (ascended over delta_x)
///   minimize_term = ||F(t + M_t * delta_t) - sg(F(u))||^2   (descended over delta_t)
/// without the margin. Gradients are w.r.t. delta (masked); y and u never receive gradient.
template <typename Scalar> struct InnerObjectives {
  Vector<double> maximize_term;
  Vector<double> minimize_term;
  Matrix<Scalar> grad_delta_x, grad_delta_t;
  Matrix<Scalar> grad_y, grad_u; // identically zero
  NetParameters<Scalar> param_grad; // of sum(maximize_term) - sum(minimize_term), when requested
};

template <typename Scalar>
InnerObjectives<Scalar> decomposed_inner_objectives(const ConvNet<Scalar> &net, const Matrix<Scalar> &x,
                                                    const Matrix<Scalar> &y, const Matrix<Scalar> &t,
                                                    const Matrix<Scalar> &u, const Matrix<Scalar> &mask_x,
                                                    const Matrix<Scalar> &mask_t, const Matrix<Scalar> &delta_x,
                                                    const Matrix<Scalar> &delta_t, bool parameter_grad = false) {
  using Tape = typename ConvNet<Scalar>::Tape;
  const Matrix<Scalar> xa = x + mask_x.cwiseProduct(delta_x);
  const Matrix<Scalar> ta = t + mask_t.cwiseProduct(delta_t);
  Tape tx, tt;
  const Matrix<Scalar> ex = net.forward(xa, &tx);
  const Matrix<Scalar> et = net.forward(ta, &tt);
  const Matrix<Scalar> ey = net.forward(y);
  const Matrix<Scalar> eu = net.forward(u);

  InnerObjectives<Scalar> r;
  r.maximize_term = detail::squared_distances(ex, ey);
  r.minimize_term = detail::squared_distances(et, eu);
  r.param_grad = net.parameters().zeros_like();
  auto *pg = parameter_grad ? &r.param_grad : nullptr;
  Matrix<Scalar> gx, gt;
  net.backward(tx, Matrix<Scalar>(Scalar(2) * (ex - ey)), pg, &gx);
  net.backward(tt, Matrix<Scalar>(Scalar(-2) * (et - eu)), pg, &gt);
  r.grad_delta_x = mask_x.cwiseProduct(gx);
  r.grad_delta_t = -mask_t.cwiseProduct(gt); // gradient of +minimize_term
  r.grad_y = Matrix<Scalar>::Zero(y.rows(), y.cols());
  r.grad_u = Matrix<Scalar>::Zero(u.rows(), u.cols());
  return r;
}

/// maximize_term + max(m - minimize_term, 0): the two-pair loss at the perturbed inputs.
inline Vector<double> recombine(const Vector<double> &maximize_term, const Vector<double> &minimize_term,
                                double margin) {
  return maximize_term + (margin - minimize_term.array()).max(0.0).matrix();
}

} // namespace rfv::loss
