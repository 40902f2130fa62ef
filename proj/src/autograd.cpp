#include "jscna/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "jscna/errors.hpp"

namespace jscna::ag {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

thread_local bool g_grad_enabled = true;

bool needs_graph(std::initializer_list<const Var*> inputs) {
  if (!g_grad_enabled) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Var* v) { return v->requires_grad(); });
}

Var make_result(Tensor value, std::initializer_list<const Var*> inputs,
                std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (needs_graph(inputs)) {
    node->requires_grad = true;
    for (const Var* v : inputs) {
      if (v->requires_grad()) node->parents.push_back(v->node());
    }
    node->backward_fn = std::move(fn);
  }
  return Var(std::move(node));
}

void im2col(const double* x, int c, int h, int w, int k, int stride, int pad,
            int ho, int wo, double* col) {
  const std::size_t cols = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          double* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, 0.0);
            continue;
          }
          const double* src = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix < 0 || ix >= w) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* col, int c, int h, int w, int k, int stride, int pad,
            int ho, int wo, double* dx) {
  const std::size_t cols = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row =
            col + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * cols;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * wo;
          double* dst = dx + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

Tensor& Node::grad_buffer() {
  if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

void Var::zero_grad() {
  if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

Var constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return Var(std::move(node));
}

Var parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  return Var(std::move(node));
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
  if (loss.value().size() != 1) throw ShapeError("backward: loss must be a scalar");
  if (!loss.requires_grad()) return;

  // Iterative post-order DFS yields a topological order (parents first).
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
}

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != ws.w) {
    throw ShapeError("conv2d: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  const int k = ws.h;
  const int cout = ws.n;
  const int ho = (xs.h + 2 * pad - k) / stride + 1;
  const int wo = (xs.w + 2 * pad - k) / stride + 1;
  const int kdim = xs.c * k * k;
  const std::size_t cols = static_cast<std::size_t>(ho) * wo;
  const bool direct = (k == 1 && stride == 1 && pad == 0);

  Tensor out(Shape{xs.n, cout, ho, wo});
  CMapMat wm(weight.value().data(), cout, kdim);
  Buffer col(direct ? 0 : static_cast<std::size_t>(kdim) * cols);
  for (int i = 0; i < xs.n; ++i) {
    const double* xi = x.value().data() + i * xs.item_size();
    const double* colp = xi;
    if (!direct) {
      im2col(xi, xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
      colp = col.data();
    }
    MapMat om(out.data() + static_cast<std::size_t>(i) * cout * cols, cout,
              static_cast<Eigen::Index>(cols));
    om.noalias() = wm * CMapMat(colp, kdim, static_cast<Eigen::Index>(cols));
    for (int co = 0; co < cout; ++co) om.row(co).array() += bias.value()[co];
  }

  return make_result(std::move(out), {&x, &weight, &bias},
                     [x, weight, bias, stride, pad, k, ho, wo, kdim, direct](Node& self) {
    const Shape xs = x.shape();
    const int cout = weight.shape().n;
    const std::size_t cols = static_cast<std::size_t>(ho) * wo;
    CMapMat wm(weight.value().data(), cout, kdim);
    Buffer col(direct ? 0 : static_cast<std::size_t>(kdim) * cols);
    Buffer dcol(static_cast<std::size_t>(kdim) * cols);
    for (int i = 0; i < xs.n; ++i) {
      CMapMat gm(self.grad.data() + static_cast<std::size_t>(i) * cout * cols, cout,
                 static_cast<Eigen::Index>(cols));
      const double* xi = x.value().data() + i * xs.item_size();
      if (bias.requires_grad()) {
        Tensor& gb = bias.node()->grad_buffer();
        for (int co = 0; co < cout; ++co) gb[co] += gm.row(co).sum();
      }
      if (weight.requires_grad()) {
        const double* colp = xi;
        if (!direct) {
          im2col(xi, xs.c, xs.h, xs.w, k, stride, pad, ho, wo, col.data());
          colp = col.data();
        }
        MapMat gw(weight.node()->grad_buffer().data(), cout, kdim);
        gw.noalias() += gm * CMapMat(colp, kdim, static_cast<Eigen::Index>(cols)).transpose();
      }
      if (x.requires_grad()) {
        double* dxi = x.node()->grad_buffer().data() + i * xs.item_size();
        if (direct) {
          MapMat dx(dxi, kdim, static_cast<Eigen::Index>(cols));
          dx.noalias() += wm.transpose() * gm;
        } else {
          MapMat dc(dcol.data(), kdim, static_cast<Eigen::Index>(cols));
          dc.noalias() = wm.transpose() * gm;
          col2im(dcol.data(), xs.c, xs.h, xs.w, k, stride, pad, ho, wo, dxi);
        }
      }
    }
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  const int in = xs.c * xs.h * xs.w;
  if (ws.c != in) throw ShapeError("linear: weight " + ws.str() + " vs input " + xs.str());
  const int out_f = ws.n;
  Tensor out(Shape{xs.n, out_f, 1, 1});
  CMapMat wm(weight.value().data(), out_f, in);
  // Row-by-row products keep every batch item's arithmetic identical to a
  // single-item call.
  for (int i = 0; i < xs.n; ++i) {
    Eigen::Map<const Eigen::VectorXd> xi(x.value().data() + static_cast<std::size_t>(i) * in, in);
    Eigen::Map<Eigen::VectorXd> oi(out.data() + static_cast<std::size_t>(i) * out_f, out_f);
    oi.noalias() = wm * xi;
    for (int o = 0; o < out_f; ++o) oi[o] += bias.value()[o];
  }
  return make_result(std::move(out), {&x, &weight, &bias}, [x, weight, bias, in, out_f](Node& self) {
    const int n = x.shape().n;
    CMapMat wm(weight.value().data(), out_f, in);
    for (int i = 0; i < n; ++i) {
      Eigen::Map<const Eigen::VectorXd> g(self.grad.data() + static_cast<std::size_t>(i) * out_f, out_f);
      Eigen::Map<const Eigen::VectorXd> xi(x.value().data() + static_cast<std::size_t>(i) * in, in);
      if (bias.requires_grad()) {
        Tensor& gb = bias.node()->grad_buffer();
        for (int o = 0; o < out_f; ++o) gb[o] += g[o];
      }
      if (weight.requires_grad()) {
        MapMat gw(weight.node()->grad_buffer().data(), out_f, in);
        gw.noalias() += g * xi.transpose();
      }
      if (x.requires_grad()) {
        Eigen::Map<Eigen::VectorXd> dx(x.node()->grad_buffer().data() + static_cast<std::size_t>(i) * in, in);
        dx.noalias() += wm.transpose() * g;
      }
    }
  });
}

Var group_norm(const Var& x, const Var& gamma, const Var& beta, int groups, double eps) {
  const Shape s = x.shape();
  if (groups <= 0 || s.c % groups != 0) {
    throw ConfigError("group_norm: " + std::to_string(s.c) + " channels not divisible into " +
                      std::to_string(groups) + " groups");
  }
  const int cpg = s.c / groups;
  const std::size_t gsize = static_cast<std::size_t>(cpg) * s.plane();
  Tensor out(s);
  auto xhat = std::make_shared<Tensor>(s);
  auto inv_std = std::make_shared<std::vector<double>>(static_cast<std::size_t>(s.n) * groups);
  for (int i = 0; i < s.n; ++i) {
    for (int g = 0; g < groups; ++g) {
      const std::size_t off = i * s.item_size() + g * gsize;
      const double* xp = x.value().data() + off;
      double mean = 0.0;
      for (std::size_t j = 0; j < gsize; ++j) mean += xp[j];
      mean /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t j = 0; j < gsize; ++j) var += (xp[j] - mean) * (xp[j] - mean);
      var /= static_cast<double>(gsize);
      const double is = 1.0 / std::sqrt(var + eps);
      (*inv_std)[static_cast<std::size_t>(i) * groups + g] = is;
      for (int cc = 0; cc < cpg; ++cc) {
        const int c = g * cpg + cc;
        const double ga = gamma.value()[c];
        const double be = beta.value()[c];
        for (std::size_t p = 0; p < s.plane(); ++p) {
          const std::size_t j = cc * s.plane() + p;
          const double xh = (xp[j] - mean) * is;
          (*xhat)[off + j] = xh;
          out[off + j] = ga * xh + be;
        }
      }
    }
  }
  return make_result(std::move(out), {&x, &gamma, &beta},
                     [x, gamma, beta, groups, cpg, gsize, xhat, inv_std](Node& self) {
    const Shape s = x.shape();
    for (int i = 0; i < s.n; ++i) {
      for (int g = 0; g < groups; ++g) {
        const std::size_t off = i * s.item_size() + g * gsize;
        double sum_d = 0.0, sum_dx = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          const int c = g * cpg + cc;
          const double ga = gamma.value()[c];
          double gg = 0.0, gb = 0.0;
          for (std::size_t p = 0; p < s.plane(); ++p) {
            const std::size_t j = off + cc * s.plane() + p;
            const double dy = self.grad[j];
            gg += dy * (*xhat)[j];
            gb += dy;
            sum_d += dy * ga;
            sum_dx += dy * ga * (*xhat)[j];
          }
          if (gamma.requires_grad()) gamma.node()->grad_buffer()[c] += gg;
          if (beta.requires_grad()) beta.node()->grad_buffer()[c] += gb;
        }
        if (!x.requires_grad()) continue;
        const double m = static_cast<double>(gsize);
        const double is = (*inv_std)[static_cast<std::size_t>(i) * groups + g];
        Tensor& dx = x.node()->grad_buffer();
        for (int cc = 0; cc < cpg; ++cc) {
          const double ga = gamma.value()[g * cpg + cc];
          for (std::size_t p = 0; p < s.plane(); ++p) {
            const std::size_t j = off + cc * s.plane() + p;
            const double dxh = self.grad[j] * ga;
            dx[j] += is * (dxh - sum_d / m - (*xhat)[j] * sum_dx / m);
          }
        }
      }
    }
  });
}

Var silu(const Var& x) {
  Tensor out(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * sigmoid(xv[i]);
  return make_result(std::move(out), {&x}, [x](Node& self) {
    Tensor& dx = x.node()->grad_buffer();
    const auto& xv = x.value();
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double s = sigmoid(xv[i]);
      dx[i] += self.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value() + b.value();
  return make_result(std::move(out), {&a, &b}, [a, b](Node& self) {
    if (a.requires_grad()) a.node()->grad_buffer() += self.grad;
    if (b.requires_grad()) b.node()->grad_buffer() += self.grad;
  });
}

Var add_channel_bias(const Var& x, const Var& e) {
  const Shape s = x.shape();
  if (e.shape().n != s.n || e.shape().c != s.c || e.shape().plane() != 1) {
    throw ShapeError("add_channel_bias: " + e.shape().str() + " vs " + s.str());
  }
  Tensor out = x.value();
  for (int i = 0; i < s.n; ++i)
    for (int c = 0; c < s.c; ++c) {
      const double v = e.value()[static_cast<std::size_t>(i) * s.c + c];
      double* p = out.data() + (static_cast<std::size_t>(i) * s.c + c) * s.plane();
      for (std::size_t j = 0; j < s.plane(); ++j) p[j] += v;
    }
  return make_result(std::move(out), {&x, &e}, [x, e](Node& self) {
    const Shape s = x.shape();
    if (x.requires_grad()) x.node()->grad_buffer() += self.grad;
    if (!e.requires_grad()) return;
    Tensor& de = e.node()->grad_buffer();
    for (int i = 0; i < s.n; ++i)
      for (int c = 0; c < s.c; ++c) {
        const double* g = self.grad.data() + (static_cast<std::size_t>(i) * s.c + c) * s.plane();
        double acc = 0.0;
        for (std::size_t j = 0; j < s.plane(); ++j) acc += g[j];
        de[static_cast<std::size_t>(i) * s.c + c] += acc;
      }
  });
}

Var upsample_nearest2x(const Var& x) {
  const Shape s = x.shape();
  Tensor out(Shape{s.n, s.c, s.h * 2, s.w * 2});
  for (int i = 0; i < s.n; ++i)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < 2 * s.h; ++y)
        for (int xx = 0; xx < 2 * s.w; ++xx) out.at(i, c, y, xx) = x.value().at(i, c, y / 2, xx / 2);
  return make_result(std::move(out), {&x}, [x](Node& self) {
    const Shape s = x.shape();
    Tensor& dx = x.node()->grad_buffer();
    for (int i = 0; i < s.n; ++i)
      for (int c = 0; c < s.c; ++c)
        for (int y = 0; y < 2 * s.h; ++y)
          for (int xx = 0; xx < 2 * s.w; ++xx) dx.at(i, c, y / 2, xx / 2) += self.grad.at(i, c, y, xx);
  });
}

Var concat_channels(const Var& a, const Var& b) {
  const Shape sa = a.shape();
  const Shape sb = b.shape();
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) {
    throw ShapeError("concat_channels: " + sa.str() + " vs " + sb.str());
  }
  Tensor out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
  for (int i = 0; i < sa.n; ++i) {
    double* dst = out.data() + i * out.shape().item_size();
    std::copy_n(a.value().data() + i * sa.item_size(), sa.item_size(), dst);
    std::copy_n(b.value().data() + i * sb.item_size(), sb.item_size(), dst + sa.item_size());
  }
  return make_result(std::move(out), {&a, &b}, [a, b](Node& self) {
    const Shape sa = a.shape();
    const Shape sb = b.shape();
    const std::size_t stride = sa.item_size() + sb.item_size();
    for (int i = 0; i < sa.n; ++i) {
      const double* g = self.grad.data() + i * stride;
      if (a.requires_grad()) {
        double* d = a.node()->grad_buffer().data() + i * sa.item_size();
        for (std::size_t j = 0; j < sa.item_size(); ++j) d[j] += g[j];
      }
      if (b.requires_grad()) {
        double* d = b.node()->grad_buffer().data() + i * sb.item_size();
        for (std::size_t j = 0; j < sb.item_size(); ++j) d[j] += g[sa.item_size() + j];
      }
    }
  });
}

Var self_attention(const Var& qkv, int heads, Tensor* head_mean_probs) {
  const Shape s = qkv.shape();
  if (s.c % 3 != 0 || (s.c / 3) % heads != 0) {
    throw ConfigError("self_attention: " + std::to_string(s.c) +
                      " packed channels incompatible with " + std::to_string(heads) + " heads");
  }
  const int c = s.c / 3;
  const int d = c / heads;
  const int tokens = s.h * s.w;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));

  Tensor out(Shape{s.n, c, s.h, s.w});
  // probs[(i * heads + h)] is tokens x tokens, row = query.
  auto probs = std::make_shared<std::vector<RowMat>>(static_cast<std::size_t>(s.n) * heads);
  if (head_mean_probs) *head_mean_probs = Tensor(Shape{s.n, 1, tokens, tokens});

  for (int i = 0; i < s.n; ++i) {
    const double* base = qkv.value().data() + i * s.item_size();
    for (int h = 0; h < heads; ++h) {
      // Channel-major slices: (d, tokens).
      CMapMat q(base + static_cast<std::size_t>(h) * d * tokens, d, tokens);
      CMapMat kk(base + static_cast<std::size_t>(c + h * d) * tokens, d, tokens);
      CMapMat v(base + static_cast<std::size_t>(2 * c + h * d) * tokens, d, tokens);
      RowMat sc = (q.transpose() * kk) * scale;
      for (int r = 0; r < tokens; ++r) {
        const double mx = sc.row(r).maxCoeff();
        sc.row(r) = (sc.row(r).array() - mx).exp();
        sc.row(r) /= sc.row(r).sum();
      }
      MapMat o(out.data() + i * out.shape().item_size() + static_cast<std::size_t>(h) * d * tokens, d,
               tokens);
      o.noalias() = v * sc.transpose();
      if (head_mean_probs) {
        MapMat pm(head_mean_probs->data() + static_cast<std::size_t>(i) * tokens * tokens, tokens, tokens);
        pm += sc / static_cast<double>(heads);
      }
      (*probs)[static_cast<std::size_t>(i) * heads + h] = std::move(sc);
    }
  }

  return make_result(std::move(out), {&qkv}, [qkv, heads, c, d, tokens, scale, probs](Node& self) {
    const Shape s = qkv.shape();
    Tensor& dqkv = qkv.node()->grad_buffer();
    for (int i = 0; i < s.n; ++i) {
      const double* base = qkv.value().data() + i * s.item_size();
      double* dbase = dqkv.data() + i * s.item_size();
      for (int h = 0; h < heads; ++h) {
        const RowMat& p = (*probs)[static_cast<std::size_t>(i) * heads + h];
        CMapMat q(base + static_cast<std::size_t>(h) * d * tokens, d, tokens);
        CMapMat kk(base + static_cast<std::size_t>(c + h * d) * tokens, d, tokens);
        CMapMat v(base + static_cast<std::size_t>(2 * c + h * d) * tokens, d, tokens);
        CMapMat go(self.grad.data() + static_cast<std::size_t>(i) * c * tokens +
                       static_cast<std::size_t>(h) * d * tokens,
                   d, tokens);
        MapMat dq(dbase + static_cast<std::size_t>(h) * d * tokens, d, tokens);
        MapMat dk(dbase + static_cast<std::size_t>(c + h * d) * tokens, d, tokens);
        MapMat dv(dbase + static_cast<std::size_t>(2 * c + h * d) * tokens, d, tokens);
        // o = v p^T  =>  dv = go p ; dp = go^T v
        dv.noalias() += go * p;
        RowMat dp = go.transpose() * v;
        RowMat ds(tokens, tokens);
        for (int r = 0; r < tokens; ++r) {
          const double dot = (dp.row(r).array() * p.row(r).array()).sum();
          ds.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
        }
        ds *= scale;
        // sc = q^T k  =>  dq = k ds^T ; dk = q ds
        dq.noalias() += kk * ds.transpose();
        dk.noalias() += q * ds;
      }
    }
  });
}

Var mse(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "mse");
  const auto n = static_cast<double>(a.value().size());
  double acc = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double dlt = a.value()[i] - b.value()[i];
    acc += dlt * dlt;
  }
  return make_result(Tensor(Shape{1, 1, 1, 1}, acc / n), {&a, &b}, [a, b, n](Node& self) {
    const double g = self.grad[0] * 2.0 / n;
    for (std::size_t i = 0; i < a.value().size(); ++i) {
      const double dlt = a.value()[i] - b.value()[i];
      if (a.requires_grad()) a.node()->grad_buffer()[i] += g * dlt;
      if (b.requires_grad()) b.node()->grad_buffer()[i] -= g * dlt;
    }
  });
}

Var hybrid_l1_l2(const Var& a, const Var& b) {
  require_same_shape(a.value(), b.value(), "hybrid_l1_l2");
  const auto n = static_cast<double>(a.value().size());
  double l1 = 0.0, l2 = 0.0;
  for (std::size_t i = 0; i < a.value().size(); ++i) {
    const double dlt = a.value()[i] - b.value()[i];
    l1 += std::abs(dlt);
    l2 += dlt * dlt;
  }
  const double v = 0.5 * (l1 / n) + 0.5 * (l2 / n);
  return make_result(Tensor(Shape{1, 1, 1, 1}, v), {&a, &b}, [a, b, n](Node& self) {
    const double g = self.grad[0];
    for (std::size_t i = 0; i < a.value().size(); ++i) {
      const double dlt = a.value()[i] - b.value()[i];
      const double sgn = dlt > 0.0 ? 1.0 : (dlt < 0.0 ? -1.0 : 0.0);
      const double gi = g * (0.5 * sgn / n + dlt / n);
      if (a.requires_grad()) a.node()->grad_buffer()[i] += gi;
      if (b.requires_grad()) b.node()->grad_buffer()[i] -= gi;
    }
  });
}

Var affine_per_item(const Tensor& x, const Var& e, std::span<const double> a,
                    std::span<const double> b) {
  require_same_shape(x, e.value(), "affine_per_item");
  const Shape s = x.shape();
  if (a.size() != static_cast<std::size_t>(s.n) || b.size() != static_cast<std::size_t>(s.n)) {
    throw ShapeError("affine_per_item: coefficient count does not match batch");
  }
  Tensor out(s);
  for (int i = 0; i < s.n; ++i)
    for (std::size_t j = 0; j < s.item_size(); ++j) {
      const std::size_t k = i * s.item_size() + j;
      out[k] = a[i] * x[k] + b[i] * e.value()[k];
    }
  std::vector<double> bc(b.begin(), b.end());
  return make_result(std::move(out), {&e}, [e, bc](Node& self) {
    const Shape s = e.shape();
    Tensor& de = e.node()->grad_buffer();
    for (int i = 0; i < s.n; ++i)
      for (std::size_t j = 0; j < s.item_size(); ++j) {
        const std::size_t k = i * s.item_size() + j;
        de[k] += bc[static_cast<std::size_t>(i)] * self.grad[k];
      }
  });
}

Var weighted_sum(const Var& s1, double w1, const Var& s2, double w2) {
  if (s1.value().size() != 1 || s2.value().size() != 1) {
    throw ShapeError("weighted_sum: operands must be scalars");
  }
  const double v = w1 * s1.item() + w2 * s2.item();
  return make_result(Tensor(Shape{1, 1, 1, 1}, v), {&s1, &s2}, [s1, w1, s2, w2](Node& self) {
    if (s1.requires_grad()) s1.node()->grad_buffer()[0] += w1 * self.grad[0];
    if (s2.requires_grad()) s2.node()->grad_buffer()[0] += w2 * self.grad[0];
  });
}

}  // namespace jscna::ag
