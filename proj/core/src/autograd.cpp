// Copyright 2026 The Anomagic Authors
// SPDX-License-Identifier: Apache-2.0

#include "anomagic/autograd.hpp"

#include <Eigen/Core>
#include <cmath>
#include <unordered_set>

#include "anomagic/errors.hpp"

namespace anomagic::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

MapMat as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
  return MapMat(t.data().data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
ConstMapMat as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
  return ConstMapMat(t.data().data(), static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

Var make(Tensor value, std::vector<std::shared_ptr<Node>> parents,
         std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const auto& p : parents) {
    if (p->requires_grad) {
      node->requires_grad = true;
      break;
    }
  }
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(bw);
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_2d(const Var& a, const char* op) {
  if (a.shape().size() != 2) {
    throw ShapeError(std::string(op) + ": expected 2-D tensor, got " + shape_str(a.shape()));
  }
}

void require_3d(const Var& a, const char* op) {
  if (a.shape().size() != 3) {
    throw ShapeError(std::string(op) + ": expected [C,H,W] tensor, got " + shape_str(a.shape()));
  }
}

void accumulate(Node& parent, const Tensor& g) {
  if (!parent.requires_grad) return;
  auto& buf = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

Tensor Var::grad() const {
  if (node_->grad.shape() != node_->value.shape()) return Tensor(node_->value.shape(), 0.0);
  return node_->grad;
}

void Var::zero_grad() { node_->grad = Tensor(); }

void backward(const Var& out) {
  if (out.value().size() != 1) throw ShapeError("backward: output must hold one element");
  if (!out.requires_grad()) return;

  // Iterative post-order DFS for a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(out.node().get(), 0);
  visited.insert(out.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients are transient; leaves accumulate across calls.
  for (Node* n : order) {
    if (!n->parents.empty()) n->grad = Tensor(n->value.shape(), 0.0);
  }
  out.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward) n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->parents.empty()) n->grad = Tensor();
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    accumulate(*self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      auto& gb = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return make(std::move(out), {a.node(), b.node()}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

Var scale(const Var& a, double s) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= s;
  return make(std::move(out), {a.node()}, [s](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
  });
}

Var square(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v *= v;
  return make(std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * p.value[i] * self.grad[i];
  });
}

Var silu(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = v / (1.0 + std::exp(-v));
  return make(std::move(out), {a.node()}, [](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = p.value[i];
      const double s = 1.0 / (1.0 + std::exp(-x));
      g[i] += self.grad[i] * s * (1.0 + x * (1.0 - s));
    }
  });
}

Var tanh(const Var& a) {
  Tensor out = a.value();
  for (auto& v : out.data()) v = std::tanh(v);
  return make(std::move(out), {a.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Var matmul(const Var& a, const Var& b, bool transpose_b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t bk = transpose_b ? b.shape()[1] : b.shape()[0];
  const std::size_t n = transpose_b ? b.shape()[0] : b.shape()[1];
  if (k != bk) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + (transpose_b ? "^T" : ""));
  }
  Tensor out({m, n});
  auto A = as_mat(a.value(), m, k);
  auto B = as_mat(b.value(), b.shape()[0], b.shape()[1]);
  if (transpose_b) {
    as_mat(out, m, n).noalias() = A * B.transpose();
  } else {
    as_mat(out, m, n).noalias() = A * B;
  }
  return make(std::move(out), {a.node(), b.node()}, [m, k, n, transpose_b](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    auto G = as_mat(static_cast<const Tensor&>(self.grad), m, n);
    if (pa.requires_grad) {
      auto gA = as_mat(pa.grad_buffer(), m, k);
      if (transpose_b) {
        gA.noalias() += G * as_mat(static_cast<const Tensor&>(pb.value), n, k);
      } else {
        gA.noalias() += G * as_mat(static_cast<const Tensor&>(pb.value), k, n).transpose();
      }
    }
    if (pb.requires_grad) {
      auto Av = as_mat(static_cast<const Tensor&>(pa.value), m, k);
      if (transpose_b) {
        as_mat(pb.grad_buffer(), n, k).noalias() += G.transpose() * Av;
      } else {
        as_mat(pb.grad_buffer(), k, n).noalias() += Av.transpose() * G;
      }
    }
  });
}

Var transpose(const Var& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out({n, m});
  as_mat(out, n, m) = as_mat(a.value(), m, n).transpose();
  return make(std::move(out), {a.node()}, [m, n](Node& self) {
    as_mat(self.parents[0]->grad_buffer(), m, n) +=
        as_mat(static_cast<const Tensor&>(self.grad), n, m).transpose();
  });
}

Var add_row_bias(const Var& a, const Var& bias) {
  require_2d(a, "add_row_bias");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (bias.value().size() != n) throw ShapeError("add_row_bias: bias length mismatch");
  Tensor out = a.value();
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bias.value()[c];
  return make(std::move(out), {a.node(), bias.node()}, [m, n](Node& self) {
    accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    }
  });
}

Var add_channel_bias(const Var& a, const Var& bias) {
  const std::size_t c = a.shape().at(0);
  if (bias.value().size() != c) throw ShapeError("add_channel_bias: bias length mismatch");
  const std::size_t inner = a.value().size() / c;
  Tensor out = a.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < inner; ++i) out[ch * inner + i] += bias.value()[ch];
  return make(std::move(out), {a.node(), bias.node()}, [c, inner](Node& self) {
    accumulate(*self.parents[0], self.grad);
    if (self.parents[1]->requires_grad) {
      auto& g = self.parents[1]->grad_buffer();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < inner; ++i) g[ch] += self.grad[ch * inner + i];
    }
  });
}

Var softmax_rows(const Var& a) {
  require_2d(a, "softmax_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out = a.value();
  for (std::size_t r = 0; r < m; ++r) {
    double* row = out.data().data() + r * n;
    double mx = row[0];
    for (std::size_t c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < n; ++c) row[c] /= z;
  }
  return make(std::move(out), {a.node()}, [m, n](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r) {
      const double* y = self.value.data().data() + r * n;
      const double* gy = self.grad.data().data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += y[c] * gy[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += y[c] * (gy[c] - dot);
    }
  });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
  require_2d(a, "layer_norm_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (gamma.value().size() != n || beta.value().size() != n) {
    throw ShapeError("layer_norm_rows: affine parameter length mismatch");
  }
  Tensor normed({m, n});
  std::vector<double> inv_std(m);
  Tensor out({m, n});
  for (std::size_t r = 0; r < m; ++r) {
    const double* x = a.value().data().data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += x[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double xh = (x[c] - mu) * inv_std[r];
      normed[r * n + c] = xh;
      out[r * n + c] = xh * gamma.value()[c] + beta.value()[c];
    }
  }
  return make(std::move(out), {a.node(), gamma.node(), beta.node()},
              [m, n, normed = std::move(normed), inv_std = std::move(inv_std)](Node& self) {
                Node& px = *self.parents[0];
                Node& pg = *self.parents[1];
                Node& pb = *self.parents[2];
                const double nn = static_cast<double>(n);
                for (std::size_t r = 0; r < m; ++r) {
                  const double* gy = self.grad.data().data() + r * n;
                  const double* xh = normed.data().data() + r * n;
                  if (pg.requires_grad) {
                    auto& g = pg.grad_buffer();
                    for (std::size_t c = 0; c < n; ++c) g[c] += gy[c] * xh[c];
                  }
                  if (pb.requires_grad) {
                    auto& g = pb.grad_buffer();
                    for (std::size_t c = 0; c < n; ++c) g[c] += gy[c];
                  }
                  if (px.requires_grad) {
                    double s1 = 0.0, s2 = 0.0;
                    for (std::size_t c = 0; c < n; ++c) {
                      const double gh = gy[c] * pg.value[c];
                      s1 += gh;
                      s2 += gh * xh[c];
                    }
                    auto& g = px.grad_buffer();
                    for (std::size_t c = 0; c < n; ++c) {
                      const double gh = gy[c] * pg.value[c];
                      g[r * n + c] += inv_std[r] * (gh - s1 / nn - xh[c] * s2 / nn);
                    }
                  }
                }
              });
}

Var mean_rows(const Var& a) {
  require_2d(a, "mean_rows");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (m == 0) throw ShapeError("mean_rows: no rows");
  Tensor out({1, n});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += a.value()[r * n + c];
  for (auto& v : out.data()) v /= static_cast<double>(m);
  return make(std::move(out), {a.node()}, [m, n](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c] * inv;
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make(std::move(out), {a.node()},
              [](Node& self) { accumulate(*self.parents[0], self.grad); });
}

Var concat0(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat0: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t lead = 0;
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) throw ShapeError("concat0: trailing shapes differ");
    lead += p.shape()[0];
    nodes.push_back(p.node());
    sizes.push_back(p.value().size());
  }
  Shape out_shape = tail;
  out_shape.insert(out_shape.begin(), lead);
  Tensor out(out_shape);
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + off);
    off += p.value().size();
  }
  return make(std::move(out), std::move(nodes), [sizes](Node& self) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) {
        auto& g = p.grad_buffer();
        for (std::size_t j = 0; j < sizes[i]; ++j) g[j] += self.grad[off + j];
      }
      off += sizes[i];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t m = parts[0].shape().at(0);
  std::size_t n = 0;
  std::vector<std::shared_ptr<Node>> nodes;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.shape()[0] != m) throw ShapeError("concat_cols: row counts differ");
    widths.push_back(p.shape()[1]);
    n += p.shape()[1];
    nodes.push_back(p.node());
  }
  Tensor out({m, n});
  std::size_t c0 = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < widths[i]; ++c)
        out[r * n + c0 + c] = parts[i].value()[r * widths[i] + c];
    c0 += widths[i];
  }
  return make(std::move(out), std::move(nodes), [m, n, widths](Node& self) {
    std::size_t c0 = 0;
    for (std::size_t i = 0; i < widths.size(); ++i) {
      Node& p = *self.parents[i];
      if (p.requires_grad) {
        auto& g = p.grad_buffer();
        for (std::size_t r = 0; r < m; ++r)
          for (std::size_t c = 0; c < widths[i]; ++c)
            g[r * widths[i] + c] += self.grad[r * n + c0 + c];
      }
      c0 += widths[i];
    }
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  require_2d(a, "slice_cols");
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (begin > end || end > n) throw ShapeError("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  Tensor out({m, w});
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = a.value()[r * n + begin + c];
  return make(std::move(out), {a.node()}, [m, n, w, begin](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * n + begin + c] += self.grad[r * w + c];
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, std::size_t padding) {
  require_3d(x, "conv2d");
  if (weight.shape().size() != 4) throw ShapeError("conv2d: weight must be [O,C,k,k]");
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  const std::size_t O = weight.shape()[0], K = weight.shape()[2];
  if (weight.shape()[1] != C || weight.shape()[3] != K) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " incompatible with input " +
                     shape_str(x.shape()));
  }
  if (bias.value().size() != O) throw ShapeError("conv2d: bias length mismatch");
  if (H + 2 * padding < K || W + 2 * padding < K) throw ShapeError("conv2d: kernel too large");
  const std::size_t OH = H + 2 * padding - K + 1, OW = W + 2 * padding - K + 1;
  const std::size_t rows = C * K * K, cols = OH * OW;

  // im2col
  Tensor col({rows, cols});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t ky = 0; ky < K; ++ky)
      for (std::size_t kx = 0; kx < K; ++kx) {
        const std::size_t r = (c * K + ky) * K + kx;
        for (std::size_t oy = 0; oy < OH; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) - static_cast<std::ptrdiff_t>(padding);
          for (std::size_t ox = 0; ox < OW; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) - static_cast<std::ptrdiff_t>(padding);
            double v = 0.0;
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(H) &&
                ix < static_cast<std::ptrdiff_t>(W)) {
              v = x.value()[(c * H + static_cast<std::size_t>(iy)) * W + static_cast<std::size_t>(ix)];
            }
            col[r * cols + oy * OW + ox] = v;
          }
        }
      }

  Tensor out({O, OH, OW});
  auto Wm = as_mat(weight.value(), O, rows);
  auto Om = as_mat(out, O, cols);
  Om.noalias() = Wm * as_mat(static_cast<const Tensor&>(col), rows, cols);
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < cols; ++i) out[o * cols + i] += bias.value()[o];

  return make(std::move(out), {x.node(), weight.node(), bias.node()},
              [=, col = std::move(col)](Node& self) {
                Node& px = *self.parents[0];
                Node& pw = *self.parents[1];
                Node& pb = *self.parents[2];
                auto G = as_mat(static_cast<const Tensor&>(self.grad), O, cols);
                if (pw.requires_grad) {
                  as_mat(pw.grad_buffer(), O, rows).noalias() +=
                      G * as_mat(col, rows, cols).transpose();
                }
                if (pb.requires_grad) {
                  auto& g = pb.grad_buffer();
                  for (std::size_t o = 0; o < O; ++o)
                    for (std::size_t i = 0; i < cols; ++i) g[o] += self.grad[o * cols + i];
                }
                if (px.requires_grad) {
                  Tensor dcol({rows, cols});
                  as_mat(dcol, rows, cols).noalias() =
                      as_mat(static_cast<const Tensor&>(pw.value), O, rows).transpose() * G;
                  auto& g = px.grad_buffer();
                  for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t ky = 0; ky < K; ++ky)
                      for (std::size_t kx = 0; kx < K; ++kx) {
                        const std::size_t r = (c * K + ky) * K + kx;
                        for (std::size_t oy = 0; oy < OH; ++oy) {
                          const auto iy = static_cast<std::ptrdiff_t>(oy + ky) -
                                          static_cast<std::ptrdiff_t>(padding);
                          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                          for (std::size_t ox = 0; ox < OW; ++ox) {
                            const auto ix = static_cast<std::ptrdiff_t>(ox + kx) -
                                            static_cast<std::ptrdiff_t>(padding);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                            g[(c * H + static_cast<std::size_t>(iy)) * W +
                              static_cast<std::size_t>(ix)] += dcol[r * cols + oy * OW + ox];
                          }
                        }
                      }
                }
              });
}

Var avg_pool(const Var& x, std::size_t f) {
  require_3d(x, "avg_pool");
  const std::size_t C = x.shape()[0], H = x.shape()[1], W = x.shape()[2];
  if (f == 0 || H % f || W % f) throw ShapeError("avg_pool: size not divisible by factor");
  const std::size_t h = H / f, w = W / f;
  const double inv = 1.0 / static_cast<double>(f * f);
  Tensor out({C, h, w});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx)
        out.at(c, y / f, xx / f) += x.value().at(c, y, xx) * inv;
  return make(std::move(out), {x.node()}, [C, H, W, f, inv](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) g.at(c, y, xx) += self.grad.at(c, y / f, xx / f) * inv;
  });
}

Var upsample_nearest(const Var& x, std::size_t f) {
  require_3d(x, "upsample_nearest");
  const std::size_t C = x.shape()[0], h = x.shape()[1], w = x.shape()[2];
  const std::size_t H = h * f, W = w * f;
  Tensor out({C, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t xx = 0; xx < W; ++xx) out.at(c, y, xx) = x.value().at(c, y / f, xx / f);
  return make(std::move(out), {x.node()}, [C, H, W, f](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx) g.at(c, y / f, xx / f) += self.grad.at(c, y, xx);
  });
}

Var sum(const Var& a) {
  return make(Tensor::scalar(a.value().sum()), {a.node()}, [](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g.data()) v += self.grad[0];
  });
}

Var mean(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

}  // namespace anomagic::ad
