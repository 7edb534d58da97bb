#include "gbs/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include <Eigen/Core>

namespace gbs::ad {

namespace {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
Var<T> make_result(Tensor<T> value, std::vector<NodePtr<T>> inputs,
                   std::function<void(Node<T>&)> grad_fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  bool needs = std::any_of(inputs.begin(), inputs.end(),
                           [](const NodePtr<T>& n) { return n && n->requires_grad; });
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(grad_fn);
  }
  return Var<T>(std::move(node));
}

template <typename T>
bool wants(const NodePtr<T>& n) {
  return n && n->requires_grad;
}

void check_same(const std::vector<int>& a, const std::vector<int>& b, const char* op) {
  GBS_CHECK(a == b, kShape, std::string(op) + ": shape mismatch");
}

template <typename T>
T safe_norm(const T* v, std::size_t n, std::size_t stride) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += v[i * stride] * v[i * stride];
  return std::sqrt(acc);
}

// Gradient of y = v / max(|v|, eps) given upstream g:
//   |v| > eps: (g - y (g.y)) / |v|;  otherwise g / eps.
template <typename T>
void normalize_backward(const T* y, const T* g, T norm, T* dv, std::size_t n,
                        std::size_t stride) {
  const T eps = static_cast<T>(kNormEps);
  if (norm > eps) {
    T dot = 0;
    for (std::size_t i = 0; i < n; ++i) dot += g[i * stride] * y[i * stride];
    for (std::size_t i = 0; i < n; ++i)
      dv[i * stride] += (g[i * stride] - y[i * stride] * dot) / norm;
  } else {
    for (std::size_t i = 0; i < n; ++i) dv[i * stride] += g[i * stride] / eps;
  }
}

}  // namespace

template <typename T>
void backward(const Var<T>& root) {
  GBS_CHECK(root.numel() == 1, kShape, "backward() needs a scalar root");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root.node()->grad_buffer().data[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && node->grad.data.size() == node->value.data.size()) node->backward(*node);
  }
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  return Var<T>(std::move(value), false);
}

template <typename T>
Var<T> parameter(Tensor<T> value) {
  return Var<T>(std::move(value), true);
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  check_same(a.shape(), b.shape(), "add");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!wants(in)) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  check_same(a.shape(), b.shape(), "sub");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    if (wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  check_same(a.shape(), b.shape(), "mul");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& na = self.inputs[0];
    auto& nb = self.inputs[1];
    if (wants(na)) {
      auto& g = na->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * nb->value[i];
    }
    if (wants(nb)) {
      auto& g = nb->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * na->value[i];
    }
  });
}

template <typename T>
Var<T> maximum(const Var<T>& a, const Var<T>& b) {
  check_same(a.shape(), b.shape(), "maximum");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(a.value()[i], b.value()[i]);
  return make_result<T>(std::move(out), {a.node(), b.node()}, [](Node<T>& self) {
    auto& na = self.inputs[0];
    auto& nb = self.inputs[1];
    for (std::size_t i = 0; i < self.grad.numel(); ++i) {
      bool first = na->value[i] >= nb->value[i];
      auto& target = first ? na : nb;
      if (wants(target)) target->grad_buffer()[i] += self.grad[i];
    }
  });
}

template <typename T>
Var<T> scale(const Var<T>& a, T factor) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * factor;
  return make_result<T>(std::move(out), {a.node()}, [factor](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T offset) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] + offset;
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::max(a.value()[i], T(0));
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i)
      if (self.value[i] > T(0)) g[i] += self.grad[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = T(1) / (T(1) + std::exp(-a.value()[i]));
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) {
      T y = self.value[i];
      g[i] += self.grad[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
Var<T> exp(const Var<T>& a) {
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = std::exp(a.value()[i]);
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

template <typename T>
Var<T> reshape(const Var<T>& a, std::vector<int> shape) {
  GBS_CHECK(Tensor<T>::count(shape) == a.numel(), kShape, "reshape: element count changes");
  Tensor<T> out;
  out.shape = std::move(shape);
  out.data = a.value().data;
  return make_result<T>(std::move(out), {a.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& a) {
  T acc = 0;
  for (T v : a.value().data) acc += v;
  return make_result<T>(Tensor<T>({1}, acc), {a.node()}, [](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.numel()));
}

template <typename T>
Var<T> mse(const Var<T>& a, const Tensor<T>& target) {
  check_same(a.shape(), target.shape, "mse");
  const std::size_t n = a.numel();
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    T d = a.value()[i] - target[i];
    acc += d * d;
  }
  return make_result<T>(Tensor<T>({1}, acc / static_cast<T>(n)), {a.node()},
                        [target, n](Node<T>& self) {
                          auto& in = self.inputs[0];
                          auto& g = in->grad_buffer();
                          const T k = T(2) * self.grad[0] / static_cast<T>(n);
                          for (std::size_t i = 0; i < n; ++i) g[i] += k * (in->value[i] - target[i]);
                        });
}

template <typename T>
Var<T> max_of(const std::vector<Var<T>>& scalars) {
  GBS_CHECK(!scalars.empty(), kShape, "max_of: empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scalars.size(); ++i)
    if (scalars[i].item() > scalars[best].item()) best = i;
  std::vector<NodePtr<T>> inputs;
  for (const auto& s : scalars) inputs.push_back(s.node());
  return make_result<T>(Tensor<T>({1}, scalars[best].item()), std::move(inputs),
                        [best](Node<T>& self) {
                          if (wants(self.inputs[best])) self.inputs[best]->grad_buffer()[0] += self.grad[0];
                        });
}

template <typename T>
Var<T> stack(const std::vector<Var<T>>& scalars) {
  Tensor<T> out({static_cast<int>(scalars.size())});
  std::vector<NodePtr<T>> inputs;
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    GBS_CHECK(scalars[i].numel() == 1, kShape, "stack: inputs must be scalars");
    out[i] = scalars[i].item();
    inputs.push_back(scalars[i].node());
  }
  return make_result<T>(std::move(out), std::move(inputs), [](Node<T>& self) {
    for (std::size_t i = 0; i < self.inputs.size(); ++i)
      if (wants(self.inputs[i])) self.inputs[i]->grad_buffer()[0] += self.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Spatial

namespace {

// cols[(c*k + ky)*k + kx, y*W + x] = x[c, y+ky-pad, x+kx-pad] (0 outside).
template <typename T>
void im2col(const T* x, int channels, int height, int width, int k, T* cols) {
  const int pad = k / 2;
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * hw;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - pad;
          T* dst = row + y * width;
          if (sy < 0 || sy >= height) {
            std::fill(dst, dst + width, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(c) * height + sy) * width;
          for (int xx = 0; xx < width; ++xx) {
            const int sx = xx + kx - pad;
            dst[xx] = (sx < 0 || sx >= width) ? T(0) : src[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int channels, int height, int width, int k, T* x) {
  const int pad = k / 2;
  const int hw = height * width;
  for (int c = 0; c < channels; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * hw;
        for (int y = 0; y < height; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= height) continue;
          T* dst = x + (static_cast<std::size_t>(c) * height + sy) * width;
          const T* src = row + y * width;
          for (int xx = 0; xx < width; ++xx) {
            const int sx = xx + kx - pad;
            if (sx >= 0 && sx < width) dst[sx] += src[xx];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  GBS_CHECK(x.value().rank() == 3, kShape, "conv2d: input must be [C, H, W]");
  GBS_CHECK(weight.value().rank() == 4, kShape, "conv2d: weight must be [O, C, k, k]");
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  const int out_ch = weight.dim(0), k = weight.dim(2);
  GBS_CHECK(weight.dim(1) == channels, kShape, "conv2d: channel mismatch");
  GBS_CHECK(k == weight.dim(3) && k % 2 == 1, kShape, "conv2d: kernel must be square and odd");
  const bool has_bias = bias.defined();
  if (has_bias) GBS_CHECK(bias.numel() == static_cast<std::size_t>(out_ch), kShape, "conv2d: bias size");

  const int hw = height * width;
  const int patch = channels * k * k;
  auto cols = std::make_shared<std::vector<T>>();
  const T* col_ptr = x.value().data.data();
  if (k != 1) {
    cols->resize(static_cast<std::size_t>(patch) * hw);
    im2col(x.value().data.data(), channels, height, width, k, cols->data());
    col_ptr = cols->data();
  }

  Tensor<T> out({out_ch, height, width});
  MatMap<T> y(out.data.data(), out_ch, hw);
  ConstMatMap<T> w(weight.value().data.data(), out_ch, patch);
  ConstMatMap<T> c(col_ptr, patch, hw);
  y.noalias() = w * c;
  if (has_bias) {
    for (int o = 0; o < out_ch; ++o) y.row(o).array() += bias.value()[o];
  }

  std::vector<NodePtr<T>> inputs{x.node(), weight.node()};
  if (has_bias) inputs.push_back(bias.node());
  return make_result<T>(
      std::move(out), std::move(inputs),
      [cols, channels, height, width, k, out_ch, hw, patch, has_bias](Node<T>& self) {
        auto& nx = self.inputs[0];
        auto& nw = self.inputs[1];
        ConstMatMap<T> dy(self.grad.data.data(), out_ch, hw);
        const T* col_ptr = k == 1 ? nx->value.data.data() : cols->data();
        ConstMatMap<T> c(col_ptr, patch, hw);
        if (wants(nw)) {
          MatMap<T> dw(nw->grad_buffer().data.data(), out_ch, patch);
          dw.noalias() += dy * c.transpose();
        }
        if (has_bias && wants(self.inputs[2])) {
          auto& db = self.inputs[2]->grad_buffer();
          for (int o = 0; o < out_ch; ++o) db[o] += dy.row(o).sum();
        }
        if (wants(nx)) {
          ConstMatMap<T> w(nw->value.data.data(), out_ch, patch);
          auto& gx = nx->grad_buffer();
          if (k == 1) {
            MatMap<T> dx(gx.data.data(), patch, hw);
            dx.noalias() += w.transpose() * dy;
          } else {
            std::vector<T> dcols(static_cast<std::size_t>(patch) * hw);
            MatMap<T> dc(dcols.data(), patch, hw);
            dc.noalias() = w.transpose() * dy;
            col2im(dcols.data(), channels, height, width, k, gx.data.data());
          }
        }
      });
}

template <typename T>
Var<T> max_pool(const Var<T>& x, int stride) {
  GBS_CHECK(x.value().rank() == 3, kShape, "max_pool: input must be [C, H, W]");
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  GBS_CHECK(stride >= 1 && height % stride == 0 && width % stride == 0, kShape,
            "max_pool: spatial size not divisible by stride");
  const int oh = height / stride, ow = width / stride;
  Tensor<T> out({channels, oh, ow});
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.numel());
  const auto& in = x.value().data;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int xx = 0; xx < ow; ++xx) {
        std::size_t best = (static_cast<std::size_t>(c) * height + y * stride) * width + xx * stride;
        for (int dy = 0; dy < stride; ++dy) {
          for (int dx = 0; dx < stride; ++dx) {
            std::size_t idx =
                (static_cast<std::size_t>(c) * height + y * stride + dy) * width + xx * stride + dx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        std::size_t o = (static_cast<std::size_t>(c) * oh + y) * ow + xx;
        out[o] = in[best];
        (*argmax)[o] = best;
      }
    }
  }
  return make_result<T>(std::move(out), {x.node()}, [argmax](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t o = 0; o < argmax->size(); ++o) g[(*argmax)[o]] += self.grad[o];
  });
}

template <typename T>
Var<T> upsample_nearest(const Var<T>& x, int factor) {
  GBS_CHECK(x.value().rank() == 3, kShape, "upsample_nearest: input must be [C, H, W]");
  GBS_CHECK(factor >= 1, kParameter, "upsample_nearest: factor must be >= 1");
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  const int oh = height * factor, ow = width * factor;
  Tensor<T> out({channels, oh, ow});
  for (int c = 0; c < channels; ++c)
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx)
        out[(static_cast<std::size_t>(c) * oh + y) * ow + xx] =
            x.value()[(static_cast<std::size_t>(c) * height + y / factor) * width + xx / factor];
  return make_result<T>(std::move(out), {x.node()},
                        [channels, height, width, factor, oh, ow](Node<T>& self) {
                          auto& g = self.inputs[0]->grad_buffer();
                          for (int c = 0; c < channels; ++c)
                            for (int y = 0; y < oh; ++y)
                              for (int xx = 0; xx < ow; ++xx)
                                g[(static_cast<std::size_t>(c) * height + y / factor) * width + xx / factor] +=
                                    self.grad[(static_cast<std::size_t>(c) * oh + y) * ow + xx];
                        });
}

template <typename T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  GBS_CHECK(a.value().rank() == 3 && b.value().rank() == 3, kShape, "concat_channels: rank 3 required");
  GBS_CHECK(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2), kShape, "concat_channels: spatial mismatch");
  Tensor<T> out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.value().data.begin(), a.value().data.end(), out.data.begin());
  std::copy(b.value().data.begin(), b.value().data.end(), out.data.begin() + a.numel());
  const std::size_t split = a.numel();
  return make_result<T>(std::move(out), {a.node(), b.node()}, [split](Node<T>& self) {
    if (wants(self.inputs[0])) {
      auto& g = self.inputs[0]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[i];
    }
    if (wants(self.inputs[1])) {
      auto& g = self.inputs[1]->grad_buffer();
      for (std::size_t i = 0; i < g.numel(); ++i) g[i] += self.grad[split + i];
    }
  });
}

template <typename T>
Var<T> tile(const Var<T>& v, int height, int width) {
  GBS_CHECK(v.value().rank() == 1, kShape, "tile: input must be a vector");
  const int channels = v.dim(0);
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  Tensor<T> out({channels, height, width});
  for (int c = 0; c < channels; ++c)
    std::fill(out.data.begin() + c * hw, out.data.begin() + (c + 1) * hw, v.value()[c]);
  return make_result<T>(std::move(out), {v.node()}, [channels, hw](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int c = 0; c < channels; ++c) {
      T acc = 0;
      for (std::size_t p = 0; p < hw; ++p) acc += self.grad[c * hw + p];
      g[c] += acc;
    }
  });
}

// ---------------------------------------------------------------------------
// Text path

template <typename T>
Var<T> gather_rows(const Var<T>& table, const std::vector<int>& rows) {
  GBS_CHECK(table.value().rank() == 2, kShape, "gather_rows: table must be rank 2");
  GBS_CHECK(!rows.empty(), kShape, "gather_rows: no rows requested");
  const int dim = table.dim(1);
  Tensor<T> out({static_cast<int>(rows.size()), dim});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    GBS_CHECK(rows[r] >= 0 && rows[r] < table.dim(0), kShape, "gather_rows: row out of range");
    std::copy_n(table.value().data.begin() + static_cast<std::size_t>(rows[r]) * dim, dim,
                out.data.begin() + r * dim);
  }
  return make_result<T>(std::move(out), {table.node()}, [rows, dim](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (int d = 0; d < dim; ++d) g[static_cast<std::size_t>(rows[r]) * dim + d] += self.grad[r * dim + d];
  });
}

template <typename T>
Var<T> linear_rows(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  GBS_CHECK(x.value().rank() == 2 && weight.value().rank() == 2, kShape, "linear_rows: rank 2 required");
  const int rows = x.dim(0), in = x.dim(1), out_dim = weight.dim(0);
  GBS_CHECK(weight.dim(1) == in, kShape, "linear_rows: inner dimension mismatch");
  GBS_CHECK(bias.numel() == static_cast<std::size_t>(out_dim), kShape, "linear_rows: bias size");
  Tensor<T> out({rows, out_dim});
  MatMap<T> y(out.data.data(), rows, out_dim);
  ConstMatMap<T> xm(x.value().data.data(), rows, in);
  ConstMatMap<T> w(weight.value().data.data(), out_dim, in);
  y.noalias() = xm * w.transpose();
  for (int r = 0; r < rows; ++r)
    for (int o = 0; o < out_dim; ++o) y(r, o) += bias.value()[o];
  return make_result<T>(std::move(out), {x.node(), weight.node(), bias.node()},
                        [rows, in, out_dim](Node<T>& self) {
                          ConstMatMap<T> dy(self.grad.data.data(), rows, out_dim);
                          auto& nx = self.inputs[0];
                          auto& nw = self.inputs[1];
                          if (wants(nx)) {
                            ConstMatMap<T> w(nw->value.data.data(), out_dim, in);
                            MatMap<T> dx(nx->grad_buffer().data.data(), rows, in);
                            dx.noalias() += dy * w;
                          }
                          if (wants(nw)) {
                            ConstMatMap<T> xm(nx->value.data.data(), rows, in);
                            MatMap<T> dw(nw->grad_buffer().data.data(), out_dim, in);
                            dw.noalias() += dy.transpose() * xm;
                          }
                          if (wants(self.inputs[2])) {
                            auto& db = self.inputs[2]->grad_buffer();
                            for (int r = 0; r < rows; ++r)
                              for (int o = 0; o < out_dim; ++o) db[o] += dy(r, o);
                          }
                        });
}

template <typename T>
Var<T> mean_rows(const Var<T>& x) {
  GBS_CHECK(x.value().rank() == 2, kShape, "mean_rows: rank 2 required");
  const int rows = x.dim(0), cols = x.dim(1);
  Tensor<T> out({cols});
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) out[c] += x.value()[static_cast<std::size_t>(r) * cols + c];
  const T inv = T(1) / static_cast<T>(rows);
  for (auto& v : out.data) v *= inv;
  return make_result<T>(std::move(out), {x.node()}, [rows, cols, inv](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int r = 0; r < rows; ++r)
      for (int c = 0; c < cols; ++c) g[static_cast<std::size_t>(r) * cols + c] += self.grad[c] * inv;
  });
}

// ---------------------------------------------------------------------------
// Dense linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  GBS_CHECK(a.value().rank() == 2 && b.value().rank() == 2, kShape, "matmul: rank 2 required");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  GBS_CHECK(b.dim(0) == k, kShape, "matmul: inner dimension mismatch");
  Tensor<T> out({m, n});
  MatMap<T>(out.data.data(), m, n).noalias() =
      ConstMatMap<T>(a.value().data.data(), m, k) * ConstMatMap<T>(b.value().data.data(), k, n);
  return make_result<T>(std::move(out), {a.node(), b.node()}, [m, k, n](Node<T>& self) {
    auto& na = self.inputs[0];
    auto& nb = self.inputs[1];
    ConstMatMap<T> dy(self.grad.data.data(), m, n);
    if (wants(na)) {
      MatMap<T>(na->grad_buffer().data.data(), m, k).noalias() +=
          dy * ConstMatMap<T>(nb->value.data.data(), k, n).transpose();
    }
    if (wants(nb)) {
      MatMap<T>(nb->grad_buffer().data.data(), k, n).noalias() +=
          ConstMatMap<T>(na->value.data.data(), m, k).transpose() * dy;
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& a) {
  GBS_CHECK(a.value().rank() == 2, kShape, "transpose: rank 2 required");
  const int m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  MatMap<T>(out.data.data(), n, m) = ConstMatMap<T>(a.value().data.data(), m, n).transpose();
  return make_result<T>(std::move(out), {a.node()}, [m, n](Node<T>& self) {
    MatMap<T>(self.inputs[0]->grad_buffer().data.data(), m, n) +=
        ConstMatMap<T>(self.grad.data.data(), n, m).transpose();
  });
}

template <typename T>
Var<T> softmax_rows(const Var<T>& a) {
  GBS_CHECK(a.value().rank() == 2, kShape, "softmax_rows: rank 2 required");
  const int m = a.dim(0), n = a.dim(1);
  Tensor<T> out({m, n});
  for (int r = 0; r < m; ++r) {
    const T* in = a.value().data.data() + static_cast<std::size_t>(r) * n;
    T* o = out.data.data() + static_cast<std::size_t>(r) * n;
    T top = *std::max_element(in, in + n);
    T total = 0;
    for (int c = 0; c < n; ++c) total += (o[c] = std::exp(in[c] - top));
    for (int c = 0; c < n; ++c) o[c] /= total;
  }
  return make_result<T>(std::move(out), {a.node()}, [m, n](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (int r = 0; r < m; ++r) {
      const std::size_t base = static_cast<std::size_t>(r) * n;
      T dot = 0;
      for (int c = 0; c < n; ++c) dot += self.grad[base + c] * self.value[base + c];
      for (int c = 0; c < n; ++c) g[base + c] += self.value[base + c] * (self.grad[base + c] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// Similarity

template <typename T>
Var<T> normalize(const Var<T>& v) {
  const std::size_t n = v.numel();
  const T norm = safe_norm(v.value().data.data(), n, 1);
  const T denom = std::max(norm, static_cast<T>(kNormEps));
  Tensor<T> out(v.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = v.value()[i] / denom;
  return make_result<T>(std::move(out), {v.node()}, [norm, n](Node<T>& self) {
    normalize_backward(self.value.data.data(), self.grad.data.data(), norm,
                       self.inputs[0]->grad_buffer().data.data(), n, 1);
  });
}

template <typename T>
Var<T> normalize_channels(const Var<T>& x) {
  GBS_CHECK(x.value().rank() == 3, kShape, "normalize_channels: input must be [C, H, W]");
  const int channels = x.dim(0);
  const std::size_t hw = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  auto norms = std::make_shared<std::vector<T>>(hw);
  Tensor<T> out(x.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    const T norm = safe_norm(x.value().data.data() + p, channels, hw);
    (*norms)[p] = norm;
    const T denom = std::max(norm, static_cast<T>(kNormEps));
    for (int c = 0; c < channels; ++c) out[c * hw + p] = x.value()[c * hw + p] / denom;
  }
  return make_result<T>(std::move(out), {x.node()}, [norms, channels, hw](Node<T>& self) {
    T* g = self.inputs[0]->grad_buffer().data.data();
    for (std::size_t p = 0; p < hw; ++p)
      normalize_backward(self.value.data.data() + p, self.grad.data.data() + p, (*norms)[p], g + p,
                         channels, hw);
  });
}

template <typename T>
Var<T> distance_gate(const Var<T>& x_hat, const Var<T>& w_hat) {
  GBS_CHECK(x_hat.value().rank() == 3 && w_hat.value().rank() == 1, kShape,
            "distance_gate: expects [C, H, W] and [C]");
  const int channels = x_hat.dim(0);
  GBS_CHECK(w_hat.dim(0) == channels, kShape, "distance_gate: channel mismatch");
  const std::size_t hw = static_cast<std::size_t>(x_hat.dim(1)) * x_hat.dim(2);
  Tensor<T> out(x_hat.shape());
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < hw; ++p)
      out[c * hw + p] = std::exp(-std::abs(x_hat.value()[c * hw + p] - w_hat.value()[c]));
  return make_result<T>(std::move(out), {x_hat.node(), w_hat.node()}, [channels, hw](Node<T>& self) {
    auto& nx = self.inputs[0];
    auto& nw = self.inputs[1];
    T* gx = wants(nx) ? nx->grad_buffer().data.data() : nullptr;
    T* gw = wants(nw) ? nw->grad_buffer().data.data() : nullptr;
    for (int c = 0; c < channels; ++c) {
      T acc = 0;
      for (std::size_t p = 0; p < hw; ++p) {
        const std::size_t i = c * hw + p;
        const T diff = nx->value[i] - nw->value[c];
        const T sign = diff > T(0) ? T(1) : (diff < T(0) ? T(-1) : T(0));
        const T d = -sign * self.value[i] * self.grad[i];
        if (gx) gx[i] += d;
        acc -= d;
      }
      if (gw) gw[c] += acc;
    }
  });
}

template <typename T>
Var<T> cosine_map(const Var<T>& x, const Var<T>& w) {
  GBS_CHECK(x.value().rank() == 3 && w.value().rank() == 1, kShape, "cosine_map: expects [C, H, W] and [C]");
  const int channels = x.dim(0), height = x.dim(1), width = x.dim(2);
  GBS_CHECK(w.dim(0) == channels, kShape, "cosine_map: channel mismatch");
  const std::size_t hw = static_cast<std::size_t>(height) * width;
  const T eps = static_cast<T>(kNormEps);
  const T w_norm = safe_norm(w.value().data.data(), channels, 1);
  auto x_norms = std::make_shared<std::vector<T>>(hw);
  auto dots = std::make_shared<std::vector<T>>(hw);
  Tensor<T> out({1, height, width});
  for (std::size_t p = 0; p < hw; ++p) {
    T dot = 0;
    for (int c = 0; c < channels; ++c) dot += x.value()[c * hw + p] * w.value()[c];
    const T xn = safe_norm(x.value().data.data() + p, channels, hw);
    (*x_norms)[p] = xn;
    (*dots)[p] = dot;
    out[p] = dot / (std::max(xn, eps) * std::max(w_norm, eps));
  }
  return make_result<T>(std::move(out), {x.node(), w.node()},
                        [x_norms, dots, w_norm, channels, hw, eps](Node<T>& self) {
                          auto& nx = self.inputs[0];
                          auto& nw = self.inputs[1];
                          T* gx = wants(nx) ? nx->grad_buffer().data.data() : nullptr;
                          T* gw = wants(nw) ? nw->grad_buffer().data.data() : nullptr;
                          const T wd = std::max(w_norm, eps);
                          for (std::size_t p = 0; p < hw; ++p) {
                            const T g = self.grad[p];
                            if (g == T(0)) continue;
                            const T xn = (*x_norms)[p];
                            const T xd = std::max(xn, eps);
                            const T cos = self.value[p];
                            for (int c = 0; c < channels; ++c) {
                              const T xv = nx->value[c * hw + p];
                              const T wv = nw->value[c];
                              if (gx) {
                                T d = wv / (xd * wd);
                                if (xn > eps) d -= cos * xv / (xn * xn);
                                gx[c * hw + p] += g * d;
                              }
                              if (gw) {
                                T d = xv / (xd * wd);
                                if (w_norm > eps) d -= cos * wv / (w_norm * w_norm);
                                gw[c] += g * d;
                              }
                            }
                          }
                        });
}

template <typename T>
Var<T> scale_by_map(const Var<T>& x, const Var<T>& map) {
  GBS_CHECK(x.value().rank() == 3 && map.value().rank() == 3 && map.dim(0) == 1, kShape,
            "scale_by_map: expects [C, H, W] and [1, H, W]");
  GBS_CHECK(x.dim(1) == map.dim(1) && x.dim(2) == map.dim(2), kShape, "scale_by_map: spatial mismatch");
  const int channels = x.dim(0);
  const std::size_t hw = map.numel();
  Tensor<T> out(x.shape());
  for (int c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < hw; ++p) out[c * hw + p] = x.value()[c * hw + p] * map.value()[p];
  return make_result<T>(std::move(out), {x.node(), map.node()}, [channels, hw](Node<T>& self) {
    auto& nx = self.inputs[0];
    auto& nm = self.inputs[1];
    if (wants(nx)) {
      auto& g = nx->grad_buffer();
      for (int c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < hw; ++p) g[c * hw + p] += self.grad[c * hw + p] * nm->value[p];
    }
    if (wants(nm)) {
      auto& g = nm->grad_buffer();
      for (int c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < hw; ++p) g[p] += self.grad[c * hw + p] * nx->value[c * hw + p];
    }
  });
}

template <typename T>
Var<T> weighted_pixel_sum(const Var<T>& x, const Var<T>& map) {
  GBS_CHECK(x.value().rank() == 3 && map.value().rank() == 3 && map.dim(0) == 1, kShape,
            "weighted_pixel_sum: expects [C, H, W] and [1, H, W]");
  GBS_CHECK(x.dim(1) == map.dim(1) && x.dim(2) == map.dim(2), kShape,
            "weighted_pixel_sum: spatial mismatch");
  const int channels = x.dim(0);
  const std::size_t hw = map.numel();
  Tensor<T> out({channels});
  for (int c = 0; c < channels; ++c) {
    T acc = 0;
    for (std::size_t p = 0; p < hw; ++p) acc += x.value()[c * hw + p] * map.value()[p];
    out[c] = acc;
  }
  return make_result<T>(std::move(out), {x.node(), map.node()}, [channels, hw](Node<T>& self) {
    auto& nx = self.inputs[0];
    auto& nm = self.inputs[1];
    if (wants(nx)) {
      auto& g = nx->grad_buffer();
      for (int c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < hw; ++p) g[c * hw + p] += self.grad[c] * nm->value[p];
    }
    if (wants(nm)) {
      auto& g = nm->grad_buffer();
      for (int c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < hw; ++p) g[p] += self.grad[c] * nx->value[c * hw + p];
    }
  });
}

template <typename T>
Var<T> cosine(const Var<T>& a, const Var<T>& b) {
  GBS_CHECK(a.numel() == b.numel(), kShape, "cosine: length mismatch");
  const int n = static_cast<int>(a.numel());
  auto va = reshape(a, {n, 1, 1});
  auto out = cosine_map(va, reshape(b, {n}));
  return reshape(out, {1});
}

template <typename T>
Var<T> symmetric_cross_entropy(const Var<T>& z, T temperature) {
  GBS_CHECK(z.value().rank() == 2 && z.dim(0) == z.dim(1), kShape,
            "symmetric_cross_entropy: square matrix required");
  const int b = z.dim(0);
  // Row softmax (texts over images) and column softmax (images over texts).
  auto rows = std::make_shared<std::vector<T>>(static_cast<std::size_t>(b) * b);
  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(b) * b);
  const auto& zv = z.value().data;
  T loss = 0;
  for (int k = 0; k < b; ++k) {
    T top = -std::numeric_limits<T>::infinity();
    for (int m = 0; m < b; ++m) top = std::max(top, temperature * zv[k * b + m]);
    T total = 0;
    for (int m = 0; m < b; ++m) total += std::exp(temperature * zv[k * b + m] - top);
    for (int m = 0; m < b; ++m) (*rows)[k * b + m] = std::exp(temperature * zv[k * b + m] - top) / total;
    loss += -(temperature * zv[k * b + k] - top - std::log(total));
  }
  for (int m = 0; m < b; ++m) {
    T top = -std::numeric_limits<T>::infinity();
    for (int k = 0; k < b; ++k) top = std::max(top, temperature * zv[k * b + m]);
    T total = 0;
    for (int k = 0; k < b; ++k) total += std::exp(temperature * zv[k * b + m] - top);
    for (int k = 0; k < b; ++k) (*cols)[k * b + m] = std::exp(temperature * zv[k * b + m] - top) / total;
    loss += -(temperature * zv[m * b + m] - top - std::log(total));
  }
  loss /= static_cast<T>(b);
  return make_result<T>(Tensor<T>({1}, loss), {z.node()}, [rows, cols, b, temperature](Node<T>& self) {
    auto& g = self.inputs[0]->grad_buffer();
    const T k = self.grad[0] * temperature / static_cast<T>(b);
    for (int r = 0; r < b; ++r) {
      for (int c = 0; c < b; ++c) {
        const T target = r == c ? T(1) : T(0);
        g[r * b + c] += k * (((*rows)[r * b + c] - target) + ((*cols)[r * b + c] - target));
      }
    }
  });
}

// ---------------------------------------------------------------------------

#define GBS_INSTANTIATE(T)                                                            \
  template void backward<T>(const Var<T>&);                                           \
  template Var<T> constant<T>(Tensor<T>);                                             \
  template Var<T> parameter<T>(Tensor<T>);                                            \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> sub<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> mul<T>(const Var<T>&, const Var<T>&);                               \
  template Var<T> maximum<T>(const Var<T>&, const Var<T>&);                           \
  template Var<T> scale<T>(const Var<T>&, T);                                         \
  template Var<T> add_scalar<T>(const Var<T>&, T);                                    \
  template Var<T> relu<T>(const Var<T>&);                                             \
  template Var<T> sigmoid<T>(const Var<T>&);                                          \
  template Var<T> exp<T>(const Var<T>&);                                              \
  template Var<T> reshape<T>(const Var<T>&, std::vector<int>);                        \
  template Var<T> sum<T>(const Var<T>&);                                              \
  template Var<T> mean<T>(const Var<T>&);                                             \
  template Var<T> mse<T>(const Var<T>&, const Tensor<T>&);                            \
  template Var<T> max_of<T>(const std::vector<Var<T>>&);                              \
  template Var<T> stack<T>(const std::vector<Var<T>>&);                               \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&);             \
  template Var<T> max_pool<T>(const Var<T>&, int);                                    \
  template Var<T> upsample_nearest<T>(const Var<T>&, int);                            \
  template Var<T> concat_channels<T>(const Var<T>&, const Var<T>&);                   \
  template Var<T> tile<T>(const Var<T>&, int, int);                                   \
  template Var<T> gather_rows<T>(const Var<T>&, const std::vector<int>&);             \
  template Var<T> linear_rows<T>(const Var<T>&, const Var<T>&, const Var<T>&);        \
  template Var<T> mean_rows<T>(const Var<T>&);                                        \
  template Var<T> matmul<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> transpose<T>(const Var<T>&);                                        \
  template Var<T> softmax_rows<T>(const Var<T>&);                                     \
  template Var<T> normalize<T>(const Var<T>&);                                        \
  template Var<T> normalize_channels<T>(const Var<T>&);                               \
  template Var<T> distance_gate<T>(const Var<T>&, const Var<T>&);                     \
  template Var<T> cosine_map<T>(const Var<T>&, const Var<T>&);                        \
  template Var<T> scale_by_map<T>(const Var<T>&, const Var<T>&);                      \
  template Var<T> weighted_pixel_sum<T>(const Var<T>&, const Var<T>&);                \
  template Var<T> cosine<T>(const Var<T>&, const Var<T>&);                            \
  template Var<T> symmetric_cross_entropy<T>(const Var<T>&, T);

GBS_INSTANTIATE(float)
GBS_INSTANTIATE(double)

#undef GBS_INSTANTIATE

}  // namespace gbs::ad
