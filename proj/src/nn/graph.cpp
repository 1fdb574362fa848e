#include "patchdiff/nn/graph.hpp"

#include <cmath>

#include "patchdiff/errors.hpp"
#include "patchdiff/rng.hpp"

namespace patchdiff::nn {

template <typename Real>
int Graph<Real>::constant(Tensor<Real> value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, false, {}});
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename Real>
int Graph<Real>::parameter(const Tensor<Real>& value) {
  nodes_.push_back(Node{{}, {}, &value, record_, {}});
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename Real>
int Graph<Real>::emit(Tensor<Real> value, std::initializer_list<int> inputs, BackwardFn fn) {
  bool needs = false;
  if (record_) {
    for (int id : inputs) needs = needs || nodes_[id].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, nullptr, needs, needs ? std::move(fn) : BackwardFn{}});
  return static_cast<int>(nodes_.size()) - 1;
}

template <typename Real>
const Tensor<Real>& Graph<Real>::value(int id) const {
  const Node& node = nodes_[id];
  return node.alias ? *node.alias : node.value;
}

template <typename Real>
Tensor<Real>& Graph<Real>::grad(int id) {
  Node& node = nodes_[id];
  const Tensor<Real>& v = node.alias ? *node.alias : node.value;
  if (!node.grad.same_shape(v)) node.grad = v.zeros_like();
  return node.grad;
}

template <typename Real>
void Graph<Real>::backward(int root) {
  if (!record_) throw Error("backward called on a non-recording graph");
  if (value(root).size() != 1) throw ShapeError("backward root must be a scalar");
  grad(root).fill(Real(1));
  for (int id = root; id >= 0; --id) {
    Node& node = nodes_[id];
    // Nodes whose gradient was never touched contribute nothing.
    if (node.backward && node.grad.size() != 0) node.backward(*this, id);
  }
}

template <typename Real>
int conv2d(Graph<Real>& g, int x, int weight, int bias, ConvGeometry geom) {
  Tensor<Real> y = conv2d_forward(g.value(x), g.value(weight), g.value(bias), geom);
  return g.emit(std::move(y), {x, weight, bias}, [=](Graph<Real>& gr, int self) {
    Tensor<Real>* dx = gr.needs_grad(x) ? &gr.grad(x) : nullptr;
    Tensor<Real>* dw = gr.needs_grad(weight) ? &gr.grad(weight) : nullptr;
    Tensor<Real>* db = gr.needs_grad(bias) ? &gr.grad(bias) : nullptr;
    conv2d_backward(gr.value(x), gr.value(weight), gr.grad(self), geom, dx, dw, db);
  });
}

template <typename Real>
int group_norm(Graph<Real>& g, int x, int gamma, int beta, int groups) {
  constexpr double kEps = 1e-5;
  auto cache = std::make_shared<GroupNormCache<Real>>();
  Tensor<Real> y = group_norm_forward(g.value(x), g.value(gamma), g.value(beta), groups, kEps, *cache);
  return g.emit(std::move(y), {x, gamma, beta}, [=](Graph<Real>& gr, int self) {
    Tensor<Real>* dx = gr.needs_grad(x) ? &gr.grad(x) : nullptr;
    Tensor<Real>* dg = gr.needs_grad(gamma) ? &gr.grad(gamma) : nullptr;
    Tensor<Real>* db = gr.needs_grad(beta) ? &gr.grad(beta) : nullptr;
    group_norm_backward(gr.value(x), gr.value(gamma), gr.grad(self), groups, *cache, dx, dg, db);
  });
}

template <typename Real>
int silu(Graph<Real>& g, int x) {
  const Tensor<Real>& xv = g.value(x);
  Tensor<Real> y = xv.zeros_like();
  const Real* src = xv.data();
  Real* dst = y.data();
  const std::size_t n = xv.size();
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) dst[i] = src[i] / (Real(1) + std::exp(-src[i]));
  return g.emit(std::move(y), {x}, [=](Graph<Real>& gr, int self) {
    const Real* xs = gr.value(x).data();
    const Real* gy = gr.grad(self).data();
    Real* gx = gr.grad(x).data();
    const std::size_t len = gr.value(x).size();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < len; ++i) {
      const Real s = Real(1) / (Real(1) + std::exp(-xs[i]));
      gx[i] += gy[i] * s * (Real(1) + xs[i] * (Real(1) - s));
    }
  });
}

template <typename Real>
int add(Graph<Real>& g, int a, int b) {
  require_same_shape(g.value(a), g.value(b), "add");
  Tensor<Real> y = g.value(a);
  const Real* bv = g.value(b).data();
  for (std::size_t i = 0; i < y.size(); ++i) y.data()[i] += bv[i];
  return g.emit(std::move(y), {a, b}, [=](Graph<Real>& gr, int self) {
    const Tensor<Real>& gy = gr.grad(self);
    for (int id : {a, b}) {
      if (!gr.needs_grad(id)) continue;
      Real* gx = gr.grad(id).data();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy.data()[i];
    }
  });
}

template <typename Real>
int add_channel_bias(Graph<Real>& g, int x, int v) {
  const Tensor<Real>& xv = g.value(x);
  const Tensor<Real>& vv = g.value(v);
  if (vv.n() != xv.n() || vv.c() != xv.c() || vv.plane() != 1) {
    throw ShapeError("add_channel_bias: " + vv.shape_string() + " cannot broadcast onto " + xv.shape_string());
  }
  Tensor<Real> y = xv;
  const std::size_t plane = xv.plane();
  for (int i = 0; i < xv.n(); ++i)
    for (int c = 0; c < xv.c(); ++c) {
      Real* row = y.item(i) + c * plane;
      const Real b = vv.at(i, c, 0, 0);
      for (std::size_t j = 0; j < plane; ++j) row[j] += b;
    }
  return g.emit(std::move(y), {x, v}, [=](Graph<Real>& gr, int self) {
    const Tensor<Real>& gy = gr.grad(self);
    if (gr.needs_grad(x)) {
      Real* gx = gr.grad(x).data();
      for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy.data()[i];
    }
    if (gr.needs_grad(v)) {
      Tensor<Real>& gv = gr.grad(v);
      const std::size_t pl = gy.plane();
      for (int i = 0; i < gy.n(); ++i)
        for (int c = 0; c < gy.c(); ++c) {
          const Real* row = gy.item(i) + c * pl;
          Real s = 0;
          for (std::size_t j = 0; j < pl; ++j) s += row[j];
          gv.at(i, c, 0, 0) += s;
        }
    }
  });
}

template <typename Real>
int linear(Graph<Real>& g, int x, int weight, int bias) {
  const Tensor<Real>& xv = g.value(x);
  const Tensor<Real>& wv = g.value(weight);
  const Tensor<Real>& bv = g.value(bias);
  const int in = static_cast<int>(xv.item_size());
  const int out = wv.n();
  if (static_cast<int>(wv.item_size()) != in || static_cast<int>(bv.size()) != out) {
    throw ShapeError("linear: input " + xv.shape_string() + " weight " + wv.shape_string());
  }
  Tensor<Real> y(xv.n(), out, 1, 1);
  // Plain loops keep each row's result independent of the batch size.
  for (int i = 0; i < xv.n(); ++i)
    for (int o = 0; o < out; ++o) {
      Real s = bv.data()[o];
      const Real* w = wv.item(o);
      const Real* xi = xv.item(i);
      for (int j = 0; j < in; ++j) s += w[j] * xi[j];
      y.item(i)[o] = s;
    }
  return g.emit(std::move(y), {x, weight, bias}, [=](Graph<Real>& gr, int self) {
    const Tensor<Real>& gy = gr.grad(self);
    const Tensor<Real>& xs = gr.value(x);
    const Tensor<Real>& ws = gr.value(weight);
    for (int i = 0; i < xs.n(); ++i)
      for (int o = 0; o < out; ++o) {
        const Real d = gy.item(i)[o];
        if (gr.needs_grad(bias)) gr.grad(bias).data()[o] += d;
        if (gr.needs_grad(weight)) {
          Real* gw = gr.grad(weight).item(o);
          for (int j = 0; j < in; ++j) gw[j] += d * xs.item(i)[j];
        }
        if (gr.needs_grad(x)) {
          Real* gx = gr.grad(x).item(i);
          for (int j = 0; j < in; ++j) gx[j] += d * ws.item(o)[j];
        }
      }
  });
}

template <typename Real>
int concat_channels(Graph<Real>& g, int a, int b) {
  const Tensor<Real>& av = g.value(a);
  const Tensor<Real>& bv = g.value(b);
  if (av.n() != bv.n() || av.h() != bv.h() || av.w() != bv.w()) {
    throw ShapeError("concat_channels: " + av.shape_string() + " vs " + bv.shape_string());
  }
  Tensor<Real> y(av.n(), av.c() + bv.c(), av.h(), av.w());
  for (int i = 0; i < av.n(); ++i) {
    std::copy(av.item(i), av.item(i) + av.item_size(), y.item(i));
    std::copy(bv.item(i), bv.item(i) + bv.item_size(), y.item(i) + av.item_size());
  }
  return g.emit(std::move(y), {a, b}, [=](Graph<Real>& gr, int self) {
    const Tensor<Real>& gy = gr.grad(self);
    const std::size_t asz = gr.value(a).item_size();
    const std::size_t bsz = gr.value(b).item_size();
    for (int i = 0; i < gy.n(); ++i) {
      if (gr.needs_grad(a)) {
        Real* ga = gr.grad(a).item(i);
        for (std::size_t j = 0; j < asz; ++j) ga[j] += gy.item(i)[j];
      }
      if (gr.needs_grad(b)) {
        Real* gb = gr.grad(b).item(i);
        for (std::size_t j = 0; j < bsz; ++j) gb[j] += gy.item(i)[asz + j];
      }
    }
  });
}

template <typename Real>
int upsample_nearest2x(Graph<Real>& g, int x) {
  const Tensor<Real>& xv = g.value(x);
  Tensor<Real> y(xv.n(), xv.c(), xv.h() * 2, xv.w() * 2);
  for (int i = 0; i < xv.n(); ++i)
    for (int c = 0; c < xv.c(); ++c)
      for (int yy = 0; yy < y.h(); ++yy)
        for (int xx = 0; xx < y.w(); ++xx) y.at(i, c, yy, xx) = xv.at(i, c, yy / 2, xx / 2);
  return g.emit(std::move(y), {x}, [=](Graph<Real>& gr, int self) {
    const Tensor<Real>& gy = gr.grad(self);
    Tensor<Real>& gx = gr.grad(x);
    for (int i = 0; i < gy.n(); ++i)
      for (int c = 0; c < gy.c(); ++c)
        for (int yy = 0; yy < gy.h(); ++yy)
          for (int xx = 0; xx < gy.w(); ++xx) gx.at(i, c, yy / 2, xx / 2) += gy.at(i, c, yy, xx);
  });
}

template <typename Real>
int attention(Graph<Real>& g, int q, int k, int v) {
  auto probs = std::make_shared<Tensor<Real>>();
  Tensor<Real> y = attention_forward(g.value(q), g.value(k), g.value(v), *probs);
  if (!g.recording()) probs.reset();
  return g.emit(std::move(y), {q, k, v}, [=](Graph<Real>& gr, int self) {
    Tensor<Real>* dq = gr.needs_grad(q) ? &gr.grad(q) : nullptr;
    Tensor<Real>* dk = gr.needs_grad(k) ? &gr.grad(k) : nullptr;
    Tensor<Real>* dv = gr.needs_grad(v) ? &gr.grad(v) : nullptr;
    attention_backward(gr.value(q), gr.value(k), gr.value(v), *probs, gr.grad(self), dq, dk, dv);
  });
}

template <typename Real>
int dropout(Graph<Real>& g, int x, double rate, Rng& rng) {
  if (rate <= 0.0) return x;
  if (rate >= 1.0) throw RangeError("dropout rate must be below 1");
  const Tensor<Real>& xv = g.value(x);
  auto mask = std::make_shared<std::vector<Real>>(xv.size());
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  Tensor<Real> y = xv;
  for (std::size_t i = 0; i < y.size(); ++i) {
    (*mask)[i] = rng.uniform01() < rate ? Real(0) : keep_scale;
    y.data()[i] *= (*mask)[i];
  }
  return g.emit(std::move(y), {x}, [=](Graph<Real>& gr, int self) {
    const Real* gy = gr.grad(self).data();
    Real* gx = gr.grad(x).data();
    for (std::size_t i = 0; i < mask->size(); ++i) gx[i] += gy[i] * (*mask)[i];
  });
}

template <typename Real>
int mse(Graph<Real>& g, int pred, const Tensor<Real>& target) {
  require_same_shape(g.value(pred), target, "mse");
  const Tensor<Real>& pv = g.value(pred);
  double sum = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = static_cast<double>(pv.data()[i]) - target.data()[i];
    sum += d * d;
  }
  Tensor<Real> y(1, 1, 1, 1, static_cast<Real>(sum / pv.size()));
  auto tgt = std::make_shared<Tensor<Real>>(target);
  return g.emit(std::move(y), {pred}, [=](Graph<Real>& gr, int self) {
    const Real seed = gr.grad(self).data()[0];
    const Tensor<Real>& ps = gr.value(pred);
    Real* gp = gr.grad(pred).data();
    const Real scale = static_cast<Real>(2.0 / ps.size()) * seed;
    for (std::size_t i = 0; i < ps.size(); ++i) gp[i] += scale * (ps.data()[i] - tgt->data()[i]);
  });
}

#define PATCHDIFF_INSTANTIATE_OPS(Real)                                        \
  template class Graph<Real>;                                                  \
  template int conv2d(Graph<Real>&, int, int, int, ConvGeometry);              \
  template int group_norm(Graph<Real>&, int, int, int, int);                   \
  template int silu(Graph<Real>&, int);                                        \
  template int add(Graph<Real>&, int, int);                                    \
  template int add_channel_bias(Graph<Real>&, int, int);                       \
  template int linear(Graph<Real>&, int, int, int);                            \
  template int concat_channels(Graph<Real>&, int, int);                        \
  template int upsample_nearest2x(Graph<Real>&, int);                          \
  template int attention(Graph<Real>&, int, int, int);                         \
  template int dropout(Graph<Real>&, int, double, Rng&);                       \
  template int mse(Graph<Real>&, int, const Tensor<Real>&);

PATCHDIFF_INSTANTIATE_OPS(float)
PATCHDIFF_INSTANTIATE_OPS(double)

}  // namespace patchdiff::nn
