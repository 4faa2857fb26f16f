// Helpers shared by the unit and acceptance suites: independent oracles that do
// not go through the tape.
#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tsadv/autodiff.hpp"
#include "tsadv/data.hpp"
#include "tsadv/model.hpp"
#include "tsadv/rng.hpp"
#include "tsadv/tensor.hpp"

namespace tsadv::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Central differences of a scalar function over every coordinate of x.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-4) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Central differences at h and h/2. A coordinate whose two estimates disagree has a
// kink (relu, max-pool switch) inside the stencil, where finite differences are
// not an oracle for the derivative. Such coordinates are retried with h/100 and
// h/200; if those agree the refined value is used, otherwise the coordinate is
// marked non-smooth and left out of the comparison.
struct CheckedGradient {
  Tensor grad;
  std::vector<bool> smooth;
  std::size_t refined = 0;
  std::size_t kinks = 0;
};

inline double central_difference(const std::function<double(const Tensor&)>& f, Tensor& probe, std::size_t i,
                                 double h) {
  const double x = probe[i];
  probe[i] = x + h;
  const double up = f(probe);
  probe[i] = x - h;
  const double down = f(probe);
  probe[i] = x;
  return (up - down) / (2.0 * h);
}

inline CheckedGradient checked_numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                                                double h = 1e-4) {
  auto agree = [](double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); };
  CheckedGradient out{Tensor(x.shape()), std::vector<bool>(x.size(), true), 0, 0};
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out.grad[i] = central_difference(f, probe, i, h);
    if (agree(out.grad[i], central_difference(f, probe, i, h / 2), 1e-6)) continue;
    const double fine = central_difference(f, probe, i, h / 100);
    if (agree(fine, central_difference(f, probe, i, h / 200), 1e-5)) {
      out.grad[i] = fine;
      ++out.refined;
    } else {
      out.smooth[i] = false;
      ++out.kinks;
    }
  }
  return out;
}

// ||a - b|| / max(||a|| + ||b||, floor). The floor keeps exactly-zero gradients comparable.
inline double relative_error(const Tensor& a, const Tensor& b, double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

// Relative error restricted to the coordinates flagged smooth.
inline double relative_error(const Tensor& a, const CheckedGradient& numeric, double floor = 1e-8) {
  Tensor ma(a.shape()), mb(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i)
    if (numeric.smooth[i]) ma[i] = a[i], mb[i] = numeric.grad[i];
  return relative_error(ma, mb, floor);
}

// Numerically stable softmax written out directly, for oracles.
inline std::vector<double> plain_softmax(const std::vector<double>& z) {
  double m = z[0];
  for (double v : z) m = std::max(m, v);
  std::vector<double> p(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) s += (p[i] = std::exp(z[i] - m));
  for (double& v : p) v /= s;
  return p;
}

// logits = W x + b over a flattened input. Gradients are written in closed form.
class LinearModel final : public DifferentiableModel {
 public:
  LinearModel(Tensor weights, Tensor bias, Shape input_shape)
      : w_(std::move(weights)), b_(std::move(bias)), shape_(std::move(input_shape)) {}

  std::size_t num_classes() const override { return w_.dim(0); }

  Tensor logits(const Tensor& x) const override {
    Tensor z = b_;
    for (std::size_t k = 0; k < w_.dim(0); ++k)
      for (std::size_t j = 0; j < w_.dim(1); ++j) z[k] += w_.at(k, j) * x[j];
    return z;
  }

  LossAndGrad loss_and_input_grad(const Tensor& x, const LossTarget& target) const override {
    const Tensor z = logits(x);
    const auto q = plain_softmax(z.values());
    std::vector<double> dz(q.size());
    LossAndGrad out;
    if (const auto* ce = std::get_if<CrossEntropyTarget>(&target)) {
      out.loss = -std::log(q[ce->label]);
      for (std::size_t k = 0; k < q.size(); ++k) dz[k] = q[k] - (k == ce->label ? 1.0 : 0.0);
    } else {
      const auto p = plain_softmax(std::get<KlTarget>(target).reference_logits.values());
      for (std::size_t k = 0; k < q.size(); ++k) {
        out.loss += p[k] * (std::log(p[k]) - std::log(q[k]));
        dz[k] = q[k] - p[k];
      }
    }
    out.input_grad = Tensor(shape_);
    for (std::size_t k = 0; k < w_.dim(0); ++k)
      for (std::size_t j = 0; j < w_.dim(1); ++j) out.input_grad[j] += w_.at(k, j) * dz[k];
    return out;
  }

  const Tensor& weights() const { return w_; }
  const Tensor& bias() const { return b_; }

 private:
  Tensor w_, b_;
  Shape shape_;
};

inline double cross_entropy(const DifferentiableModel& m, const Tensor& x, std::size_t y) {
  const auto q = plain_softmax(m.logits(x).values());
  return -std::log(q[y]);
}

// Small classifier that keeps full finite-difference sweeps cheap.
inline ModelConfig tiny_config(bool gnlm, std::uint64_t seed = 3) {
  ModelConfig c;
  c.in_channels = 2;
  c.num_classes = 3;
  c.conv_blocks = {{3, 3}, {4, 3}};
  c.use_gnlm = gnlm;
  c.seed = seed;
  return c;
}

inline DatasetBundle small_synthetic(std::uint64_t seed = 7, std::size_t per_class = 30) {
  SynthSpec spec;
  spec.per_class = per_class;
  spec.length = 32;
  spec.seed = seed;
  return normalize(synth_generate(spec));
}

}  // namespace tsadv::testing
