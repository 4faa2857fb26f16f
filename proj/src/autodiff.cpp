#include "tsadv/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "tsadv/error.hpp"

namespace tsadv {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using ConstMapVec = Eigen::Map<const Eigen::VectorXd>;
using MapVec = Eigen::Map<Eigen::VectorXd>;

ConstMapMat as_matrix(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MapMat as_matrix(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank)
    throw ConfigError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                      shape_string(t.shape()));
}

}  // namespace

Var Tape::input(Tensor value, std::string name) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, std::move(name)});
  return Var{nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, {}});
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::vector<Var> parents, BackwardFn backward) {
  bool needs = false;
  for (Var p : parents) needs = needs || node(p).requires_grad;
  nodes_.push_back(Node{std::move(value), std::move(parents), std::move(backward), needs, {}});
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (v.id >= nodes_.size()) throw UsageError("variable does not belong to this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

Gradients Tape::backward(Var output, double seed) {
  if (consumed_) throw UsageError("tape already consumed by a backward pass");
  node(output);
  consumed_ = true;

  Gradients result;
  result.grads_.resize(nodes_.size());
  auto& grads = result.grads_;
  grads[output.id] = Tensor(nodes_[output.id].value.shape(), seed);

  std::vector<Tensor*> parent_ptrs;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || grads[i].empty() || !n.backward) continue;
    parent_ptrs.assign(n.parents.size(), nullptr);
    for (std::size_t p = 0; p < n.parents.size(); ++p) {
      const std::size_t pid = n.parents[p].id;
      if (!nodes_[pid].requires_grad) continue;
      if (grads[pid].empty()) grads[pid] = Tensor(nodes_[pid].value.shape(), 0.0);
      parent_ptrs[p] = &grads[pid];
    }
    n.backward(grads[i], parent_ptrs);
    // Intermediate gradients and closures are no longer needed.
    n.backward = nullptr;
    if (!n.parents.empty()) grads[i] = Tensor();
  }

  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.parents.empty() || !n.requires_grad) continue;
    if (grads[i].empty()) grads[i] = Tensor(n.value.shape(), 0.0);
    if (!n.name.empty()) result.named_[n.name] = grads[i];
  }
  return result;
}

const Tensor& Gradients::operator[](Var v) const {
  if (v.id >= grads_.size() || grads_[v.id].empty())
    throw UsageError("no gradient recorded for this variable (not a differentiable leaf)");
  return grads_[v.id];
}

const Tensor& Gradients::named(const std::string& name) const {
  auto it = named_.find(name);
  if (it == named_.end()) throw UsageError("no gradient named '" + name + "'");
  return it->second;
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - m);
  for (auto& v : out) v /= sum;
  return out;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size());
  if (logits.empty()) return out;
  const double m = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - m);
  const double lse = m + std::log(sum);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

Var conv1d(Tape& tape, Var input, Var kernels, Var bias) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(kernels);
  const Tensor& b = tape.value(bias);
  require_rank(x, 2, "conv1d", "input");
  require_rank(w, 3, "conv1d", "kernels");
  require_rank(b, 1, "conv1d", "bias");
  const std::size_t c_in = x.dim(0), steps = x.dim(1);
  const std::size_t c_out = w.dim(0), k = w.dim(2);
  if (w.dim(1) != c_in)
    throw ConfigError("conv1d: kernel input channels " + std::to_string(w.dim(1)) + " != input channels " +
                      std::to_string(c_in));
  if (b.dim(0) != c_out) throw ConfigError("conv1d: bias length does not match output channels");
  if (k % 2 == 0) throw ConfigError("conv1d: kernel size must be odd");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(k / 2);

  // im2col: row (c * K + j), column t holds x[c, t + j - pad].
  Tensor patches({c_in * k, steps}, 0.0);
  for (std::size_t c = 0; c < c_in; ++c)
    for (std::size_t j = 0; j < k; ++j) {
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
      double* row = patches.data().data() + (c * k + j) * steps;
      const double* src = x.data().data() + c * steps;
      for (std::size_t t = 0; t < steps; ++t) {
        const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) + shift;
        if (s >= 0 && s < static_cast<std::ptrdiff_t>(steps)) row[t] = src[s];
      }
    }

  Tensor out({c_out, steps});
  auto w_mat = as_matrix(w, c_out, c_in * k);
  as_matrix(out, c_out, steps).noalias() = w_mat * as_matrix(patches, c_in * k, steps);
  as_matrix(out, c_out, steps).colwise() += ConstMapVec(b.data().data(), static_cast<Eigen::Index>(c_out));

  return tape.record(
      std::move(out), {input, kernels, bias},
      [patches = std::move(patches), w_copy = w, c_in, c_out, k, steps, pad](const Tensor& g,
                                                                            std::span<Tensor* const> grads) {
        auto g_mat = as_matrix(g, c_out, steps);
        if (grads[1])
          as_matrix(*grads[1], c_out, c_in * k).noalias() += g_mat * as_matrix(patches, c_in * k, steps).transpose();
        if (grads[2]) MapVec(grads[2]->data().data(), static_cast<Eigen::Index>(c_out)) += g_mat.rowwise().sum();
        if (grads[0]) {
          RowMat dpatches = as_matrix(w_copy, c_out, c_in * k).transpose() * g_mat;
          Tensor& dx = *grads[0];
          for (std::size_t c = 0; c < c_in; ++c)
            for (std::size_t j = 0; j < k; ++j) {
              const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - pad;
              const double* row = dpatches.data() + (c * k + j) * steps;
              double* dst = dx.data().data() + c * steps;
              for (std::size_t t = 0; t < steps; ++t) {
                const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(t) + shift;
                if (s >= 0 && s < static_cast<std::ptrdiff_t>(steps)) dst[s] += row[t];
              }
            }
        }
      });
}

Var relu(Tape& tape, Var input) {
  Tensor out = tape.value(input);
  for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
  Tensor mask = out;
  for (auto& v : mask.data()) v = v > 0.0 ? 1.0 : 0.0;
  return tape.record(std::move(out), {input}, [mask = std::move(mask)](const Tensor& g, std::span<Tensor* const> grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += g[i] * mask[i];
  });
}

Var maxpool1d(Tape& tape, Var input, std::size_t window) {
  if (window < 1) throw ConfigError("maxpool1d: window must be >= 1");
  const Tensor& x = tape.value(input);
  require_rank(x, 2, "maxpool1d", "input");
  const std::size_t channels = x.dim(0), steps = x.dim(1);
  const std::size_t out_steps = (steps + window - 1) / window;
  Tensor out({channels, out_steps});
  std::vector<std::size_t> arg(channels * out_steps);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t o = 0; o < out_steps; ++o) {
      const std::size_t begin = o * window, end = std::min(steps, begin + window);
      std::size_t best = begin;
      for (std::size_t t = begin + 1; t < end; ++t)
        if (x.at(c, t) > x.at(c, best)) best = t;
      out.at(c, o) = x.at(c, best);
      arg[c * out_steps + o] = c * steps + best;
    }
  return tape.record(std::move(out), {input}, [arg = std::move(arg)](const Tensor& g, std::span<Tensor* const> grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < arg.size(); ++i) (*grads[0])[arg[i]] += g[i];
  });
}

Var gnlm_denoise(Tape& tape, Var input, Var theta_weights, Var phi_weights) {
  const Tensor& x = tape.value(input);
  const Tensor& wt = tape.value(theta_weights);
  const Tensor& wp = tape.value(phi_weights);
  require_rank(x, 2, "gnlm_denoise", "input");
  require_rank(wt, 2, "gnlm_denoise", "theta weights");
  require_rank(wp, 2, "gnlm_denoise", "phi weights");
  const std::size_t d = x.dim(0), steps = x.dim(1), embed = wt.dim(1);
  if (wt.dim(0) != d || wp.dim(0) != d || wp.dim(1) != embed)
    throw ConfigError("gnlm_denoise: embedding weights " + shape_string(wt.shape()) + "/" +
                      shape_string(wp.shape()) + " incompatible with input " + shape_string(x.shape()));
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  auto xm = as_matrix(x, d, steps);
  RowMat theta = as_matrix(wt, d, embed).transpose() * xm;  // [embed x T]
  RowMat phi = as_matrix(wp, d, embed).transpose() * xm;    // [embed x T]
  RowMat attn = (theta.transpose() * phi) * inv_sqrt_d;     // [T x T], row i = logits over j
  for (Eigen::Index i = 0; i < attn.rows(); ++i) {
    const double m = attn.row(i).maxCoeff();
    attn.row(i) = (attn.row(i).array() - m).exp();
    attn.row(i) /= attn.row(i).sum();
  }
  Tensor out({d, steps});
  as_matrix(out, d, steps).noalias() = xm * attn.transpose();

  return tape.record(
      std::move(out), {input, theta_weights, phi_weights},
      [x_copy = x, wt_copy = wt, wp_copy = wp, theta = std::move(theta), phi = std::move(phi),
       attn = std::move(attn), d, steps, embed, inv_sqrt_d](const Tensor& g, std::span<Tensor* const> grads) {
        auto gm = as_matrix(g, d, steps);
        auto xm = as_matrix(x_copy, d, steps);
        RowMat d_attn = gm.transpose() * xm;  // [T x T]
        // Softmax backward per row: dS = A * (dA - rowsum(A * dA)).
        const Eigen::VectorXd row_dot = attn.cwiseProduct(d_attn).rowwise().sum();
        RowMat d_logits = d_attn;
        d_logits.colwise() -= row_dot;
        d_logits = d_logits.cwiseProduct(attn);
        // d_logits now holds dL/dS where S = theta^T phi / sqrt(d).
        const RowMat d_theta = (phi * d_logits.transpose()) * inv_sqrt_d;  // [embed x T]
        const RowMat d_phi = (theta * d_logits) * inv_sqrt_d;              // [embed x T]
        if (grads[1]) as_matrix(*grads[1], d, embed).noalias() += xm * d_theta.transpose();
        if (grads[2]) as_matrix(*grads[2], d, embed).noalias() += xm * d_phi.transpose();
        if (grads[0]) {
          auto dx = as_matrix(*grads[0], d, steps);
          dx.noalias() += gm * attn;
          dx.noalias() += as_matrix(wt_copy, d, embed) * d_theta;
          dx.noalias() += as_matrix(wp_copy, d, embed) * d_phi;
        }
      });
}

Var global_avg_pool(Tape& tape, Var input) {
  const Tensor& x = tape.value(input);
  require_rank(x, 2, "global_avg_pool", "input");
  const std::size_t channels = x.dim(0), steps = x.dim(1);
  Tensor out({channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t t = 0; t < steps; ++t) s += x.at(c, t);
    out[c] = s / static_cast<double>(steps);
  }
  return tape.record(std::move(out), {input}, [channels, steps](const Tensor& g, std::span<Tensor* const> grads) {
    if (!grads[0]) return;
    const double inv = 1.0 / static_cast<double>(steps);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t t = 0; t < steps; ++t) grads[0]->at(c, t) += g[c] * inv;
  });
}

Var dense(Tape& tape, Var input, Var weights, Var bias) {
  const Tensor& x = tape.value(input);
  const Tensor& w = tape.value(weights);
  const Tensor& b = tape.value(bias);
  require_rank(x, 1, "dense", "input");
  require_rank(w, 2, "dense", "weights");
  require_rank(b, 1, "dense", "bias");
  const std::size_t m = w.dim(0), n = w.dim(1);
  if (x.dim(0) != n || b.dim(0) != m)
    throw ConfigError("dense: shapes " + shape_string(w.shape()) + ", " + shape_string(x.shape()) + ", " +
                      shape_string(b.shape()) + " are inconsistent");
  Tensor out = b;
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += w.at(i, j) * x[j];
    out[i] += s;
  }
  return tape.record(std::move(out), {input, weights, bias},
                     [x_copy = x, w_copy = w, m, n](const Tensor& g, std::span<Tensor* const> grads) {
                       if (grads[0])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) (*grads[0])[j] += w_copy.at(i, j) * g[i];
                       if (grads[1])
                         for (std::size_t i = 0; i < m; ++i)
                           for (std::size_t j = 0; j < n; ++j) grads[1]->at(i, j) += g[i] * x_copy[j];
                       if (grads[2])
                         for (std::size_t i = 0; i < m; ++i) (*grads[2])[i] += g[i];
                     });
}

Var softmax_cross_entropy(Tape& tape, Var logits, std::size_t label) {
  const Tensor& z = tape.value(logits);
  require_rank(z, 1, "softmax_cross_entropy", "logits");
  if (label >= z.size())
    throw UsageError("softmax_cross_entropy: label " + std::to_string(label) + " out of range for " +
                     std::to_string(z.size()) + " classes");
  const auto lsm = log_softmax(z.data());
  Tensor loss(Shape{}, -lsm[label]);
  return tape.record(std::move(loss), {logits}, [lsm, label](const Tensor& g, std::span<Tensor* const> grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < lsm.size(); ++i)
      (*grads[0])[i] += g[0] * (std::exp(lsm[i]) - (i == label ? 1.0 : 0.0));
  });
}

Var kl_divergence(Tape& tape, Var p_logits, Var q_logits) {
  const Tensor& a = tape.value(p_logits);
  const Tensor& b = tape.value(q_logits);
  require_rank(a, 1, "kl_divergence", "p logits");
  require_same_shape(a, b, "kl_divergence");
  const auto lp = log_softmax(a.data());
  const auto lq = log_softmax(b.data());
  const std::size_t n = lp.size();
  std::vector<double> p(n), r(n);
  double kl = 0.0, mean_r = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(lp[i]);
    r[i] = lp[i] - lq[i];
    kl += p[i] * r[i];
  }
  mean_r = kl;
  return tape.record(Tensor(Shape{}, kl), {p_logits, q_logits},
                     [p, r, lq, mean_r, n](const Tensor& g, std::span<Tensor* const> grads) {
                       if (grads[0])
                         for (std::size_t k = 0; k < n; ++k) (*grads[0])[k] += g[0] * p[k] * (r[k] - mean_r);
                       if (grads[1])
                         for (std::size_t k = 0; k < n; ++k) (*grads[1])[k] += g[0] * (std::exp(lq[k]) - p[k]);
                     });
}

Var add(Tape& tape, Var a, Var b) {
  Tensor out = tape.value(a);
  out += tape.value(b);
  return tape.record(std::move(out), {a, b}, [](const Tensor& g, std::span<Tensor* const> grads) {
    if (grads[0]) *grads[0] += g;
    if (grads[1]) *grads[1] += g;
  });
}

Var scale(Tape& tape, Var a, double factor) {
  Tensor out = tape.value(a) * factor;
  return tape.record(std::move(out), {a}, [factor](const Tensor& g, std::span<Tensor* const> grads) {
    if (!grads[0]) return;
    for (std::size_t i = 0; i < g.size(); ++i) (*grads[0])[i] += factor * g[i];
  });
}

}  // namespace tsadv
