#include "vfiqa/ops.h"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace vfiqa::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

template <typename T>
using NodePtr = std::shared_ptr<detail::Node<T>>;

template <typename T>
bool tracking(std::initializer_list<const Tensor<T>*> inputs) {
  if (!grad_enabled()) return false;
  for (const Tensor<T>* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename T>
void attach(Tensor<T>& out, std::function<void()> fn) {
  out.set_requires_grad(true);
  Tape<T>::current().record(out, std::move(fn));
}

template <typename T>
Tensor<T> empty_like_shape(const Shape& shape) {
  return Tensor<T>::zeros(shape);
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b,
                        const char* op) {
  if (a.shape() == b.shape()) return;
  if (a.rank() != b.rank()) {
    throw ShapeError(std::string(op) + ": rank mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  for (size_t i = 0; i < a.rank(); ++i) {
    if (a.dim(i) != b.dim(i)) {
      throw ShapeError(std::string(op) + ": dimension " + std::to_string(i) +
                       " differs (" + std::to_string(a.dim(i)) + " vs " +
                       std::to_string(b.dim(i)) + ")");
    }
  }
}

// Shared shape for unary elementwise ops: out = f(a), da = g * df(a, out).
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, F f, DF df) {
  Tensor<T> out = empty_like_shape<T>(a.shape());
  auto x = a.data();
  auto y = out.mutable_data();
  for (size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  if (tracking<T>({&a})) {
    attach(out, [an = a.node(), on = out.node(), df] {
      auto& ga = an->ensure_grad();
      const auto& g = on->grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * df(an->data[i], on->data[i]);
      }
    });
  }
  return out;
}

template <typename T>
void im2col(const T* im, int channels, int height, int width, int k,
            int stride, int pad, int out_h, int out_w, T* col) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + ((c * k + ki) * k + kj) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= height) {
            std::fill(row + oy * out_w, row + (oy + 1) * out_w, T(0));
            continue;
          }
          const T* src = im + (c * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kj;
            row[oy * out_w + ox] = (ix >= 0 && ix < width) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, int channels, int height, int width, int k,
                int stride, int pad, int out_h, int out_w, T* im) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + ((c * k + ki) * k + kj) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= height) continue;
          T* dst = im + (c * height + iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < width) dst[ix] += row[oy * out_w + ox];
          }
        }
      }
    }
  }
}

std::vector<int64_t> strides_of(const Shape& shape) {
  std::vector<int64_t> s(shape.size(), 1);
  for (size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
  return s;
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out = empty_like_shape<T>(a.shape());
  auto y = out.mutable_data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  if (tracking<T>({&a, &b})) {
    attach(out, [an = a.node(), bn = b.node(), on = out.node()] {
      const auto& g = on->grad;
      for (const auto& n : {an, bn}) {
        if (!n->requires_grad) continue;
        auto& gn = n->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) gn[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out = empty_like_shape<T>(a.shape());
  auto y = out.mutable_data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] - b.data()[i];
  if (tracking<T>({&a, &b})) {
    attach(out, [an = a.node(), bn = b.node(), on = out.node()] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out = empty_like_shape<T>(a.shape());
  auto y = out.mutable_data();
  for (size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  if (tracking<T>({&a, &b})) {
    attach(out, [an = a.node(), bn = b.node(), on = out.node()] {
      const auto& g = on->grad;
      if (an->requires_grad) {
        auto& ga = an->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bn->data[i];
      }
      if (bn->requires_grad) {
        auto& gb = bn->ensure_grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * an->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(
      a, [factor](T x) { return x * factor; },
      [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary(
      a, [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > 0 ? T(1) : (x < 0 ? T(-1) : T(0)); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& a, T slope) {
  return unary(
      a, [slope](T x) { return x > 0 ? x : slope * x; },
      [slope](T x, T) { return x > 0 ? T(1) : slope; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(
      a,
      [](T x) { return T(0.5) * x * (T(1) + std::erf(x * T(kInvSqrt2))); },
      [](T x, T) {
        return T(0.5) * (T(1) + std::erf(x * T(kInvSqrt2))) +
               x * T(kInvSqrt2Pi) * std::exp(T(-0.5) * x * x);
      });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        if (x >= 0) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& a, T lo, T hi) {
  return unary(
      a, [lo, hi](T x) { return std::clamp(x, lo, hi); },
      [lo, hi](T x, T) { return (x >= lo && x <= hi) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  double total = 0.0;
  for (T v : a.data()) total += v;
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total));
  if (tracking<T>({&a})) {
    attach(out, [an = a.node(), on = out.node()] {
      auto& ga = an->ensure_grad();
      const T g = on->grad[0];
      for (auto& v : ga) v += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  return reshape(mean_per_item(reshape(a, {1, a.size()})), Shape{});
}

template <typename T>
Tensor<T> mean_per_item(const Tensor<T>& a) {
  require(a.rank() >= 1, "mean_per_item: rank-0 input");
  const int64_t items = a.dim(0);
  const int64_t per = a.size() / items;
  Tensor<T> out = Tensor<T>::zeros({items});
  for (int64_t b = 0; b < items; ++b) {
    double total = 0.0;
    for (int64_t i = 0; i < per; ++i) total += a.data()[b * per + i];
    out.mutable_data()[b] = static_cast<T>(total / static_cast<double>(per));
  }
  if (tracking<T>({&a})) {
    attach(out, [an = a.node(), on = out.node(), items, per] {
      auto& ga = an->ensure_grad();
      for (int64_t b = 0; b < items; ++b) {
        const T g = on->grad[b] / static_cast<T>(per);
        for (int64_t i = 0; i < per; ++i) ga[b * per + i] += g;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(shape));
  }
  Tensor<T> out = Tensor<T>::from_vector(
      std::move(shape), std::vector<T>(a.data().begin(), a.data().end()));
  if (tracking<T>({&a})) {
    attach(out, [an = a.node(), on = out.node()] {
      auto& ga = an->ensure_grad();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += on->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather(const Tensor<T>& a, Shape out_shape,
                 std::shared_ptr<const std::vector<int64_t>> index) {
  if (static_cast<int64_t>(index->size()) != numel(out_shape)) {
    throw ShapeError("gather: index count does not match " +
                     shape_str(out_shape));
  }
  Tensor<T> out = Tensor<T>::zeros(std::move(out_shape));
  auto y = out.mutable_data();
  auto x = a.data();
  const auto& idx = *index;
  for (size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || idx[i] >= a.size()) {
      throw ShapeError("gather: index " + std::to_string(idx[i]) +
                       " out of range for " + shape_str(a.shape()));
    }
    y[i] = x[idx[i]];
  }
  if (tracking<T>({&a})) {
    attach(out, [an = a.node(), on = out.node(), index] {
      auto& ga = an->ensure_grad();
      const auto& g = on->grad;
      const auto& idx = *index;
      for (size_t i = 0; i < idx.size(); ++i) ga[idx[i]] += g[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<size_t>& order) {
  const size_t r = a.rank();
  if (order.size() != r) {
    throw ShapeError("permute: order has " + std::to_string(order.size()) +
                     " axes, tensor has " + std::to_string(r));
  }
  std::vector<bool> seen(r, false);
  Shape out_shape(r);
  for (size_t i = 0; i < r; ++i) {
    if (order[i] >= r || seen[order[i]]) {
      throw ShapeError("permute: invalid axis order");
    }
    seen[order[i]] = true;
    out_shape[i] = a.dim(order[i]);
  }
  const auto in_strides = strides_of(a.shape());
  auto index = std::make_shared<std::vector<int64_t>>(a.size());
  std::vector<int64_t> counter(r, 0);
  for (int64_t flat = 0; flat < a.size(); ++flat) {
    int64_t src = 0;
    for (size_t i = 0; i < r; ++i) src += counter[i] * in_strides[order[i]];
    (*index)[flat] = src;
    for (size_t i = r; i-- > 0;) {
      if (++counter[i] < out_shape[i]) break;
      counter[i] = 0;
    }
  }
  return gather(a, std::move(out_shape), std::move(index));
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, size_t axis, int64_t start,
                int64_t length) {
  require(axis < a.rank(), "slice: axis out of range");
  if (start < 0 || length <= 0 || start + length > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") outside dimension " +
                     std::to_string(axis) + " of extent " +
                     std::to_string(a.dim(axis)));
  }
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  int64_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  auto index = std::make_shared<std::vector<int64_t>>();
  index->reserve(static_cast<size_t>(outer * length * inner));
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t l = 0; l < length; ++l) {
      const int64_t base = (o * a.dim(axis) + start + l) * inner;
      for (int64_t i = 0; i < inner; ++i) index->push_back(base + i);
    }
  }
  return gather(a, std::move(out_shape), std::move(index));
}

template <typename T>
Tensor<T> select(const Tensor<T>& a, int64_t index) {
  require(a.rank() == 1, "select: expects a rank-1 tensor, got " +
                             shape_str(a.shape()));
  require(index >= 0 && index < a.dim(0), "select: index out of range");
  return gather(a, {},
                std::make_shared<const std::vector<int64_t>>(1, index));
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, size_t axis) {
  require(!parts.empty(), "concat: no inputs");
  const Shape& first = parts.front().shape();
  require(axis < first.size(), "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (size_t p = 0; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    require(s.size() == first.size(),
            "concat: input " + std::to_string(p) + " has rank " +
                std::to_string(s.size()));
    for (size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat: input " + std::to_string(p) +
                         " differs in dimension " + std::to_string(i) + " (" +
                         std::to_string(s[i]) + " vs " +
                         std::to_string(first[i]) + ")");
      }
    }
    out_shape[axis] += s[axis];
  }
  int64_t outer = 1, inner = 1;
  for (size_t i = 0; i < axis; ++i) outer *= first[i];
  for (size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];

  Tensor<T> out = Tensor<T>::zeros(out_shape);
  auto y = out.mutable_data();
  const int64_t out_block = out_shape[axis] * inner;
  std::vector<int64_t> offsets;
  int64_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const int64_t block = p.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::copy_n(p.data().begin() + o * block, block,
                  y.begin() + o * out_block + offset);
    }
    offset += block;
  }

  bool any = false;
  for (const auto& p : parts) any = any || tracking<T>({&p});
  if (any) {
    std::vector<NodePtr<T>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    attach(out, [nodes, offsets, on = out.node(), outer, inner, out_block,
                 axis] {
      const auto& g = on->grad;
      for (size_t k = 0; k < nodes.size(); ++k) {
        if (!nodes[k]->requires_grad) continue;
        auto& gk = nodes[k]->ensure_grad();
        const int64_t block = nodes[k]->shape[axis] * inner;
        for (int64_t o = 0; o < outer; ++o) {
          for (int64_t i = 0; i < block; ++i) {
            gk[o * block + i] += g[o * out_block + offsets[k] + i];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight,
                 const Tensor<T>& bias, int stride, int padding) {
  require(input.rank() == 4, "conv2d: input must be [B,C,H,W], got " +
                                 shape_str(input.shape()));
  require(weight.rank() == 4, "conv2d: weight must be [O,C,k,k], got " +
                                  shape_str(weight.shape()));
  if (weight.dim(1) != input.dim(1)) {
    throw ShapeError("conv2d: input channel dimension (axis 1) is " +
                     std::to_string(input.dim(1)) + " but weight expects " +
                     std::to_string(weight.dim(1)));
  }
  if (weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d: kernel must be square, got " +
                     shape_str(weight.shape()));
  }
  if (stride < 1 || padding < 0) {
    throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
  }
  const int batch = static_cast<int>(input.dim(0));
  const int channels = static_cast<int>(input.dim(1));
  const int height = static_cast<int>(input.dim(2));
  const int width = static_cast<int>(input.dim(3));
  const int out_ch = static_cast<int>(weight.dim(0));
  const int k = static_cast<int>(weight.dim(2));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_ch)) {
    throw ShapeError("conv2d: bias dimension 0 must be " +
                     std::to_string(out_ch) + ", got " +
                     shape_str(bias.shape()));
  }
  const int out_h = (height + 2 * padding - k) / stride + 1;
  const int out_w = (width + 2 * padding - k) / stride + 1;
  if (height + 2 * padding < k || width + 2 * padding < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) +
                     " larger than padded input " + shape_str(input.shape()));
  }

  const int plane = out_h * out_w;
  const int patch = channels * k * k;
  const bool direct = (k == 1 && stride == 1 && padding == 0);
  Tensor<T> out = Tensor<T>::zeros({batch, out_ch, out_h, out_w});
  ConstMapMat<T> w(weight.data().data(), out_ch, patch);
  std::vector<T> cols(direct ? 0 : static_cast<size_t>(patch) * plane);
  for (int b = 0; b < batch; ++b) {
    const T* im = input.data().data() + static_cast<size_t>(b) * channels *
                                            height * width;
    const T* col_ptr = im;
    if (!direct) {
      im2col(im, channels, height, width, k, stride, padding, out_h, out_w,
             cols.data());
      col_ptr = cols.data();
    }
    ConstMapMat<T> col(col_ptr, patch, plane);
    MapMat<T> y(out.mutable_data().data() +
                    static_cast<size_t>(b) * out_ch * plane,
                out_ch, plane);
    y.noalias() = w * col;
    if (bias.defined()) {
      for (int o = 0; o < out_ch; ++o) y.row(o).array() += bias.data()[o];
    }
  }

  if (tracking<T>({&input, &weight, &bias})) {
    NodePtr<T> bn = bias.defined() ? bias.node() : nullptr;
    attach(out, [in = input.node(), wn = weight.node(), bn, on = out.node(),
                 batch, channels, height, width, out_ch, k, stride, padding,
                 out_h, out_w, plane, patch, direct] {
      ConstMapMat<T> w(wn->data.data(), out_ch, patch);
      std::vector<T> cols(direct ? 0 : static_cast<size_t>(patch) * plane);
      std::vector<T> dcols(static_cast<size_t>(patch) * plane);
      for (int b = 0; b < batch; ++b) {
        ConstMapMat<T> g(on->grad.data() + static_cast<size_t>(b) * out_ch *
                                               plane,
                         out_ch, plane);
        const T* im =
            in->data.data() + static_cast<size_t>(b) * channels * height * width;
        if (wn->requires_grad) {
          const T* col_ptr = im;
          if (!direct) {
            im2col(im, channels, height, width, k, stride, padding, out_h,
                   out_w, cols.data());
            col_ptr = cols.data();
          }
          ConstMapMat<T> col(col_ptr, patch, plane);
          MapMat<T> gw(wn->ensure_grad().data(), out_ch, patch);
          gw.noalias() += g * col.transpose();
        }
        if (bn && bn->requires_grad) {
          auto& gb = bn->ensure_grad();
          for (int o = 0; o < out_ch; ++o) gb[o] += g.row(o).sum();
        }
        if (in->requires_grad) {
          T* gim = in->ensure_grad().data() +
                   static_cast<size_t>(b) * channels * height * width;
          if (direct) {
            MapMat<T> gx(gim, patch, plane);
            gx.noalias() += w.transpose() * g;
          } else {
            MapMat<T> dc(dcols.data(), patch, plane);
            dc.noalias() = w.transpose() * g;
            col2im_add(dcols.data(), channels, height, width, k, stride,
                       padding, out_h, out_w, gim);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  require(x.rank() >= 1, "linear: rank-0 input");
  require(weight.rank() == 2, "linear: weight must be [out,in], got " +
                                  shape_str(weight.shape()));
  const int64_t in_f = weight.dim(1);
  const int64_t out_f = weight.dim(0);
  if (x.dim(x.rank() - 1) != in_f) {
    throw ShapeError("linear: last input dimension is " +
                     std::to_string(x.dim(x.rank() - 1)) +
                     " but weight expects " + std::to_string(in_f));
  }
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != out_f)) {
    throw ShapeError("linear: bias dimension 0 must be " +
                     std::to_string(out_f));
  }
  const int64_t rows = x.size() / in_f;
  Shape out_shape = x.shape();
  out_shape.back() = out_f;
  Tensor<T> out = Tensor<T>::zeros(out_shape);
  ConstMapMat<T> xm(x.data().data(), rows, in_f);
  ConstMapMat<T> wm(weight.data().data(), out_f, in_f);
  MapMat<T> ym(out.mutable_data().data(), rows, out_f);
  ym.noalias() = xm * wm.transpose();
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bv(
        bias.data().data(), out_f);
    ym.rowwise() += bv;
  }
  if (tracking<T>({&x, &weight, &bias})) {
    NodePtr<T> bn = bias.defined() ? bias.node() : nullptr;
    attach(out, [xn = x.node(), wn = weight.node(), bn, on = out.node(), rows,
                 in_f, out_f] {
      ConstMapMat<T> g(on->grad.data(), rows, out_f);
      if (xn->requires_grad) {
        ConstMapMat<T> wm(wn->data.data(), out_f, in_f);
        MapMat<T> gx(xn->ensure_grad().data(), rows, in_f);
        gx.noalias() += g * wm;
      }
      if (wn->requires_grad) {
        ConstMapMat<T> xm(xn->data.data(), rows, in_f);
        MapMat<T> gw(wn->ensure_grad().data(), out_f, in_f);
        gw.noalias() += g.transpose() * xm;
      }
      if (bn && bn->requires_grad) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(
            bn->ensure_grad().data(), out_f);
        gb += g.colwise().sum();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b) {
  require(a.rank() == 3 && b.rank() == 3,
          "bmm: operands must be rank 3, got " + shape_str(a.shape()) +
              " and " + shape_str(b.shape()));
  if (a.dim(0) != b.dim(0)) {
    throw ShapeError("bmm: batch dimension 0 differs (" +
                     std::to_string(a.dim(0)) + " vs " +
                     std::to_string(b.dim(0)) + ")");
  }
  const int64_t groups = a.dim(0), m = a.dim(1), kdim = a.dim(2);
  const int64_t b_inner = transpose_b ? b.dim(2) : b.dim(1);
  const int64_t n = transpose_b ? b.dim(1) : b.dim(2);
  if (b_inner != kdim) {
    throw ShapeError("bmm: contraction dimension differs (" +
                     std::to_string(kdim) + " vs " + std::to_string(b_inner) +
                     ")");
  }
  Tensor<T> out = Tensor<T>::zeros({groups, m, n});
  const int64_t b_rows = b.dim(1), b_cols = b.dim(2);
  for (int64_t gi = 0; gi < groups; ++gi) {
    ConstMapMat<T> am(a.data().data() + gi * m * kdim, m, kdim);
    ConstMapMat<T> bm(b.data().data() + gi * b_rows * b_cols, b_rows, b_cols);
    MapMat<T> cm(out.mutable_data().data() + gi * m * n, m, n);
    if (transpose_b) {
      cm.noalias() = am * bm.transpose();
    } else {
      cm.noalias() = am * bm;
    }
  }
  if (tracking<T>({&a, &b})) {
    attach(out, [an = a.node(), bn = b.node(), on = out.node(), groups, m,
                 kdim, n, b_rows, b_cols, transpose_b] {
      for (int64_t gi = 0; gi < groups; ++gi) {
        ConstMapMat<T> g(on->grad.data() + gi * m * n, m, n);
        ConstMapMat<T> am(an->data.data() + gi * m * kdim, m, kdim);
        ConstMapMat<T> bm(bn->data.data() + gi * b_rows * b_cols, b_rows,
                          b_cols);
        if (an->requires_grad) {
          MapMat<T> ga(an->ensure_grad().data() + gi * m * kdim, m, kdim);
          if (transpose_b) {
            ga.noalias() += g * bm;
          } else {
            ga.noalias() += g * bm.transpose();
          }
        }
        if (bn->requires_grad) {
          MapMat<T> gb(bn->ensure_grad().data() + gi * b_rows * b_cols,
                       b_rows, b_cols);
          if (transpose_b) {
            gb.noalias() += g.transpose() * am;
          } else {
            gb.noalias() += am.transpose() * g;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& a) {
  require(a.rank() >= 1, "softmax: rank-0 input");
  const int64_t cols = a.dim(a.rank() - 1);
  const int64_t rows = a.size() / cols;
  Tensor<T> out = Tensor<T>::zeros(a.shape());
  auto x = a.data();
  auto y = out.mutable_data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * cols;
    T* yr = y.data() + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T total = T(0);
    for (int64_t c = 0; c < cols; ++c) {
      yr[c] = std::exp(xr[c] - mx);
      total += yr[c];
    }
    for (int64_t c = 0; c < cols; ++c) yr[c] /= total;
  }
  if (tracking<T>({&a})) {
    attach(out, [an = a.node(), on = out.node(), rows, cols] {
      auto& ga = an->ensure_grad();
      const auto& g = on->grad;
      const auto& y = on->data;
      for (int64_t r = 0; r < rows; ++r) {
        T dot = T(0);
        for (int64_t c = 0; c < cols; ++c) dot += g[r * cols + c] * y[r * cols + c];
        for (int64_t c = 0; c < cols; ++c) {
          ga[r * cols + c] += y[r * cols + c] * (g[r * cols + c] - dot);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_normalize(const Tensor<T>& x, T eps) {
  require(x.rank() == 4, "channel_normalize: input must be [B,C,H,W], got " +
                             shape_str(x.shape()));
  const int64_t batch = x.dim(0), channels = x.dim(1);
  const int64_t plane = x.dim(2) * x.dim(3);
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto norms = std::make_shared<std::vector<T>>(batch * plane);
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t base = b * channels * plane;
    for (int64_t p = 0; p < plane; ++p) {
      T sq = T(0);
      for (int64_t c = 0; c < channels; ++c) {
        const T v = xs[base + c * plane + p];
        sq += v * v;
      }
      const T norm = std::sqrt(sq);
      (*norms)[b * plane + p] = norm;
      for (int64_t c = 0; c < channels; ++c) {
        ys[base + c * plane + p] = xs[base + c * plane + p] / (norm + eps);
      }
    }
  }
  if (tracking<T>({&x})) {
    attach(out, [xn = x.node(), on = out.node(), norms, batch, channels, plane,
                 eps] {
      auto& gx = xn->ensure_grad();
      const auto& g = on->grad;
      const auto& xs = xn->data;
      for (int64_t b = 0; b < batch; ++b) {
        const int64_t base = b * channels * plane;
        for (int64_t p = 0; p < plane; ++p) {
          const T norm = (*norms)[b * plane + p];
          const T denom = norm + eps;
          T dot = T(0);
          for (int64_t c = 0; c < channels; ++c) {
            dot += g[base + c * plane + p] * xs[base + c * plane + p];
          }
          const T coef = norm > 0 ? dot / (norm * denom * denom) : T(0);
          for (int64_t c = 0; c < channels; ++c) {
            const int64_t i = base + c * plane + p;
            gx[i] += g[i] / denom - xs[i] * coef;
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> channel_layer_norm(const Tensor<T>& x, const Tensor<T>& gamma,
                             const Tensor<T>& beta, T eps) {
  require(x.rank() == 4, "channel_layer_norm: input must be [B,C,H,W], got " +
                             shape_str(x.shape()));
  const int64_t batch = x.dim(0), channels = x.dim(1);
  const int64_t plane = x.dim(2) * x.dim(3);
  if (gamma.size() != channels || beta.size() != channels) {
    throw ShapeError("channel_layer_norm: affine parameters must have " +
                     std::to_string(channels) + " entries (dimension 1)");
  }
  Tensor<T> out = Tensor<T>::zeros(x.shape());
  auto normed = std::make_shared<std::vector<T>>(x.size());
  auto inv_std = std::make_shared<std::vector<T>>(batch * plane);
  auto xs = x.data();
  auto ys = out.mutable_data();
  for (int64_t b = 0; b < batch; ++b) {
    const int64_t base = b * channels * plane;
    for (int64_t p = 0; p < plane; ++p) {
      T mu = T(0);
      for (int64_t c = 0; c < channels; ++c) mu += xs[base + c * plane + p];
      mu /= static_cast<T>(channels);
      T var = T(0);
      for (int64_t c = 0; c < channels; ++c) {
        const T d = xs[base + c * plane + p] - mu;
        var += d * d;
      }
      var /= static_cast<T>(channels);
      const T istd = T(1) / std::sqrt(var + eps);
      (*inv_std)[b * plane + p] = istd;
      for (int64_t c = 0; c < channels; ++c) {
        const int64_t i = base + c * plane + p;
        (*normed)[i] = (xs[i] - mu) * istd;
        ys[i] = gamma.data()[c] * (*normed)[i] + beta.data()[c];
      }
    }
  }
  if (tracking<T>({&x, &gamma, &beta})) {
    attach(out, [xn = x.node(), gn = gamma.node(), bn = beta.node(),
                 on = out.node(), normed, inv_std, batch, channels, plane] {
      const auto& g = on->grad;
      const auto& xh = *normed;
      for (int64_t b = 0; b < batch; ++b) {
        const int64_t base = b * channels * plane;
        for (int64_t p = 0; p < plane; ++p) {
          if (gn->requires_grad || bn->requires_grad) {
            for (int64_t c = 0; c < channels; ++c) {
              const int64_t i = base + c * plane + p;
              if (gn->requires_grad) gn->ensure_grad()[c] += g[i] * xh[i];
              if (bn->requires_grad) bn->ensure_grad()[c] += g[i];
            }
          }
          if (!xn->requires_grad) continue;
          T mean_d = T(0), mean_dx = T(0);
          for (int64_t c = 0; c < channels; ++c) {
            const int64_t i = base + c * plane + p;
            const T d = g[i] * gn->data[c];
            mean_d += d;
            mean_dx += d * xh[i];
          }
          mean_d /= static_cast<T>(channels);
          mean_dx /= static_cast<T>(channels);
          auto& gx = xn->ensure_grad();
          const T istd = (*inv_std)[b * plane + p];
          for (int64_t c = 0; c < channels; ++c) {
            const int64_t i = base + c * plane + p;
            const T d = g[i] * gn->data[c];
            gx[i] += istd * (d - mean_d - xh[i] * mean_dx);
          }
        }
      }
    });
  }
  return out;
}

#define VFIQA_INSTANTIATE(T)                                                  \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                 \
  template Tensor<T> scale(const Tensor<T>&, T);                              \
  template Tensor<T> add_scalar(const Tensor<T>&, T);                         \
  template Tensor<T> abs(const Tensor<T>&);                                   \
  template Tensor<T> leaky_relu(const Tensor<T>&, T);                         \
  template Tensor<T> gelu(const Tensor<T>&);                                  \
  template Tensor<T> sigmoid(const Tensor<T>&);                               \
  template Tensor<T> log(const Tensor<T>&);                                   \
  template Tensor<T> clamp(const Tensor<T>&, T, T);                           \
  template Tensor<T> sum(const Tensor<T>&);                                   \
  template Tensor<T> mean(const Tensor<T>&);                                  \
  template Tensor<T> mean_per_item(const Tensor<T>&);                         \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                        \
  template Tensor<T> gather(const Tensor<T>&, Shape,                          \
                            std::shared_ptr<const std::vector<int64_t>>);     \
  template Tensor<T> permute(const Tensor<T>&, const std::vector<size_t>&);   \
  template Tensor<T> slice(const Tensor<T>&, size_t, int64_t, int64_t);       \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, size_t);           \
  template Tensor<T> select(const Tensor<T>&, int64_t);                       \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&,               \
                            const Tensor<T>&, int, int);                      \
  template Tensor<T> linear(const Tensor<T>&, const Tensor<T>&,               \
                            const Tensor<T>&);                                \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&, bool);           \
  template Tensor<T> softmax(const Tensor<T>&);                               \
  template Tensor<T> channel_normalize(const Tensor<T>&, T);                  \
  template Tensor<T> channel_layer_norm(const Tensor<T>&, const Tensor<T>&,   \
                                        const Tensor<T>&, T);

VFIQA_INSTANTIATE(float)
VFIQA_INSTANTIATE(double)

#undef VFIQA_INSTANTIATE

}  // namespace vfiqa::ops
