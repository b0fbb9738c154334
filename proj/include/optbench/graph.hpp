#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "optbench/tensor.hpp"

namespace optbench {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct GraphError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class Op {
  kLeaf,
  kMatmul,
  kAddBias,
  kConv2d,
  kMaxPool2d,
  kRelu,
  kSigmoid,
  kFlatten,
  kSum,
  kMean,
  kSquare,
  kCos,
  kSoftmaxCrossEntropy,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddConst,
  kSelectCol,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kMatmul: return "matmul";
    case Op::kAddBias: return "add_bias";
    case Op::kConv2d: return "conv2d";
    case Op::kMaxPool2d: return "maxpool2d";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kFlatten: return "flatten";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kSquare: return "square";
    case Op::kCos: return "cos";
    case Op::kSoftmaxCrossEntropy: return "softmax_cross_entropy";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kAddConst: return "add_const";
    case Op::kSelectCol: return "select_col";
  }
  return "?";
}

template <typename T>
class Graph;

// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* g = nullptr;
  int id = -1;
};

// Reverse-mode tape over a closed primitive set. Recording order is the
// topological order; backward replays it in reverse. No in-place mutation of
// recorded activations, no internal parallelism: two passes over identical
// inputs are bitwise identical.
template <typename T>
class Graph {
 public:
  using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using MapMat = Eigen::Map<Mat>;
  using CMapMat = Eigen::Map<const Mat>;

  struct Node {
    Op op = Op::kLeaf;
    int a = -1, b = -1;
    Shape shape;
    std::vector<T> value;
    std::vector<T> adjoint;
    bool needs_grad = false;
    T scalar = T(0);                  // kScale / kAddConst constant
    int col = 0;                      // kSelectCol index
    std::vector<std::int32_t> labels;     // kSoftmaxCrossEntropy
    std::vector<T> saved;                 // softmax probabilities
    std::vector<std::int32_t> arg_index;  // kMaxPool2d argmax (flat input index)
    Tensor<T>* bound = nullptr;           // kLeaf write-back target
  };

  // Leaf bound to an external tensor; gradients accumulate into t.grad.
  Var<T> input(Tensor<T>& t) {
    Node n;
    n.op = Op::kLeaf;
    n.shape = t.shape;
    n.value = t.values;
    n.needs_grad = t.requires_grad;
    n.bound = &t;
    return push(std::move(n));
  }

  // Leaf without gradient tracking.
  Var<T> constant(const Tensor<T>& t) {
    Node n;
    n.op = Op::kLeaf;
    n.shape = t.shape;
    n.value = t.values;
    return push(std::move(n));
  }
  Var<T> constant(Shape s, std::vector<T> v) {
    return constant(Tensor<T>(std::move(s), std::move(v)));
  }

  // C[m,n] = A[m,k] * B[k,n]
  Var<T> matmul(Var<T> a, Var<T> b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.shape.rank() != 2 || nb.shape.rank() != 2 ||
        na.shape[1] != nb.shape[0]) {
      throw ShapeError(std::string("matmul: incompatible shapes ") +
                       na.shape.str() + " x " + nb.shape.str());
    }
    int m = na.shape[0], k = na.shape[1], n = nb.shape[1];
    Node out;
    out.op = Op::kMatmul;
    out.a = a.id;
    out.b = b.id;
    out.shape = Shape{m, n};
    out.value.resize(static_cast<size_t>(m) * n);
    CMapMat A(na.value.data(), m, k);
    CMapMat B(nb.value.data(), k, n);
    MapMat C(out.value.data(), m, n);
    C.noalias() = A * B;
    out.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(out));
  }

  // x[..., n] + b[n], broadcast over leading dimensions.
  Var<T> add_bias(Var<T> x, Var<T> b) {
    const Node& nx = at(x);
    const Node& nb = at(b);
    if (nb.shape.rank() != 1 || nx.shape.rank() < 1 ||
        nx.shape[nx.shape.rank() - 1] != nb.shape[0]) {
      throw ShapeError(std::string("add_bias: incompatible shapes ") +
                       nx.shape.str() + " + " + nb.shape.str());
    }
    int n = nb.shape[0];
    std::int64_t rows = nx.shape.numel() / n;
    Node out = elementwise_header(Op::kAddBias, nx, x.id, b.id);
    out.needs_grad = nx.needs_grad || nb.needs_grad;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* src = nx.value.data() + r * n;
      T* dst = out.value.data() + r * n;
      for (int j = 0; j < n; ++j) dst[j] = src[j] + nb.value[static_cast<size_t>(j)];
    }
    return push(std::move(out));
  }

  // NHWC convolution, stride 1, "same" zero padding.
  // x[B,H,W,C] * k[kh,kw,C,F] -> [B,H,W,F]
  Var<T> conv2d(Var<T> x, Var<T> kern) {
    const Node& nx = at(x);
    const Node& nk = at(kern);
    if (nx.shape.rank() != 4 || nk.shape.rank() != 4 ||
        nx.shape[3] != nk.shape[2]) {
      throw ShapeError(std::string("conv2d: incompatible shapes ") +
                       nx.shape.str() + " * " + nk.shape.str());
    }
    int B = nx.shape[0], H = nx.shape[1], W = nx.shape[2], C = nx.shape[3];
    int kh = nk.shape[0], kw = nk.shape[1], F = nk.shape[3];
    Node out;
    out.op = Op::kConv2d;
    out.a = x.id;
    out.b = kern.id;
    out.shape = Shape{B, H, W, F};
    out.value.resize(static_cast<size_t>(B) * H * W * F);
    out.needs_grad = nx.needs_grad || nk.needs_grad;

    const int patch = kh * kw * C;
    std::vector<T> col(static_cast<size_t>(H) * W * patch);
    CMapMat K(nk.value.data(), patch, F);
    for (int img = 0; img < B; ++img) {
      im2col(nx.value.data() + static_cast<std::int64_t>(img) * H * W * C, H, W,
             C, kh, kw, col.data());
      CMapMat Col(col.data(), static_cast<std::int64_t>(H) * W, patch);
      MapMat O(out.value.data() + static_cast<std::int64_t>(img) * H * W * F,
               static_cast<std::int64_t>(H) * W, F);
      O.noalias() = Col * K;
    }
    return push(std::move(out));
  }

  // 2x2 max pooling with stride 2 (floor semantics on odd extents).
  Var<T> maxpool2d(Var<T> x) {
    const Node& nx = at(x);
    if (nx.shape.rank() != 4) {
      throw ShapeError(std::string("maxpool2d: expected rank-4 NHWC input, got ") +
                       nx.shape.str());
    }
    int B = nx.shape[0], H = nx.shape[1], W = nx.shape[2], C = nx.shape[3];
    int Ho = H / 2, Wo = W / 2;
    Node out;
    out.op = Op::kMaxPool2d;
    out.a = x.id;
    out.shape = Shape{B, Ho, Wo, C};
    out.value.resize(static_cast<size_t>(B) * Ho * Wo * C);
    out.arg_index.resize(out.value.size());
    out.needs_grad = nx.needs_grad;
    std::int64_t o = 0;
    for (int img = 0; img < B; ++img) {
      const T* base = nx.value.data() + static_cast<std::int64_t>(img) * H * W * C;
      std::int64_t img_off = static_cast<std::int64_t>(img) * H * W * C;
      for (int ho = 0; ho < Ho; ++ho) {
        for (int wo = 0; wo < Wo; ++wo) {
          for (int c = 0; c < C; ++c, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::int64_t best_idx = 0;
            for (int dh = 0; dh < 2; ++dh) {
              for (int dw = 0; dw < 2; ++dw) {
                std::int64_t idx =
                    ((static_cast<std::int64_t>(ho) * 2 + dh) * W + wo * 2 + dw) * C + c;
                T v = base[idx];
                if (v > best) {
                  best = v;
                  best_idx = idx;
                }
              }
            }
            out.value[static_cast<size_t>(o)] = best;
            out.arg_index[static_cast<size_t>(o)] =
                static_cast<std::int32_t>(best_idx);
            (void)img_off;
          }
        }
      }
    }
    return push(std::move(out));
  }

  Var<T> relu(Var<T> x) {
    const Node& nx = at(x);
    Node out = elementwise_header(Op::kRelu, nx, x.id);
    for (size_t i = 0; i < nx.value.size(); ++i)
      out.value[i] = nx.value[i] > T(0) ? nx.value[i] : T(0);
    return push(std::move(out));
  }

  Var<T> sigmoid(Var<T> x) {
    const Node& nx = at(x);
    Node out = elementwise_header(Op::kSigmoid, nx, x.id);
    for (size_t i = 0; i < nx.value.size(); ++i)
      out.value[i] = T(1) / (T(1) + std::exp(-nx.value[i]));
    return push(std::move(out));
  }

  Var<T> square(Var<T> x) {
    const Node& nx = at(x);
    Node out = elementwise_header(Op::kSquare, nx, x.id);
    for (size_t i = 0; i < nx.value.size(); ++i)
      out.value[i] = nx.value[i] * nx.value[i];
    return push(std::move(out));
  }

  Var<T> cos(Var<T> x) {
    const Node& nx = at(x);
    Node out = elementwise_header(Op::kCos, nx, x.id);
    for (size_t i = 0; i < nx.value.size(); ++i) out.value[i] = std::cos(nx.value[i]);
    return push(std::move(out));
  }

  // [B, ...] -> [B, prod(rest)]
  Var<T> flatten(Var<T> x) {
    const Node& nx = at(x);
    if (nx.shape.rank() < 1) {
      throw ShapeError("flatten: expected rank >= 1, got " + nx.shape.str());
    }
    int batch = nx.shape[0];
    std::int64_t rest = nx.shape.numel() / std::max(batch, 1);
    Node out = elementwise_header(Op::kFlatten, nx, x.id);
    out.shape = Shape{batch, static_cast<int>(rest)};
    out.value = nx.value;
    return push(std::move(out));
  }

  Var<T> sum(Var<T> x) { return reduce(Op::kSum, x); }
  Var<T> mean(Var<T> x) { return reduce(Op::kMean, x); }

  // Mean cross-entropy of softmax(logits[B,C]) against integer labels[B].
  Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::int32_t> labels) {
    const Node& nl = at(logits);
    if (nl.shape.rank() != 2) {
      throw ShapeError(std::string("softmax_cross_entropy: logits must be rank 2, got ") +
                       nl.shape.str());
    }
    int B = nl.shape[0], C = nl.shape[1];
    if (static_cast<int>(labels.size()) != B) {
      throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                       " labels for batch " + std::to_string(B));
    }
    Node out;
    out.op = Op::kSoftmaxCrossEntropy;
    out.a = logits.id;
    out.shape = Shape{};
    out.labels.assign(labels.begin(), labels.end());
    out.saved.resize(static_cast<size_t>(B) * C);
    out.needs_grad = nl.needs_grad;
    double total = 0.0;
    for (int i = 0; i < B; ++i) {
      const T* row = nl.value.data() + static_cast<std::int64_t>(i) * C;
      T* p = out.saved.data() + static_cast<std::int64_t>(i) * C;
      T m = row[0];
      for (int j = 1; j < C; ++j) m = std::max(m, row[j]);
      T z = T(0);
      for (int j = 0; j < C; ++j) {
        p[j] = std::exp(row[j] - m);
        z += p[j];
      }
      for (int j = 0; j < C; ++j) p[j] /= z;
      std::int32_t y = out.labels[static_cast<size_t>(i)];
      if (y < 0 || y >= C) {
        throw ShapeError("softmax_cross_entropy: label " + std::to_string(y) +
                         " outside [0," + std::to_string(C) + ")");
      }
      total += static_cast<double>(m) + std::log(static_cast<double>(z)) -
               static_cast<double>(row[y]);
    }
    out.value = {static_cast<T>(total / B)};
    return push(std::move(out));
  }

  Var<T> add(Var<T> a, Var<T> b) { return binary(Op::kAdd, a, b); }
  Var<T> sub(Var<T> a, Var<T> b) { return binary(Op::kSub, a, b); }
  Var<T> mul(Var<T> a, Var<T> b) { return binary(Op::kMul, a, b); }

  Var<T> scale(Var<T> x, T c) {
    const Node& nx = at(x);
    Node out = elementwise_header(Op::kScale, nx, x.id);
    out.scalar = c;
    for (size_t i = 0; i < nx.value.size(); ++i) out.value[i] = c * nx.value[i];
    return push(std::move(out));
  }

  Var<T> add_const(Var<T> x, T c) {
    const Node& nx = at(x);
    Node out = elementwise_header(Op::kAddConst, nx, x.id);
    out.scalar = c;
    for (size_t i = 0; i < nx.value.size(); ++i) out.value[i] = nx.value[i] + c;
    return push(std::move(out));
  }

  // x[B,n] -> column j as [B]
  Var<T> select_col(Var<T> x, int j) {
    const Node& nx = at(x);
    if (nx.shape.rank() != 2 || j < 0 || j >= nx.shape[1]) {
      throw ShapeError("select_col: column " + std::to_string(j) +
                       " of tensor " + nx.shape.str());
    }
    int B = nx.shape[0], n = nx.shape[1];
    Node out;
    out.op = Op::kSelectCol;
    out.a = x.id;
    out.col = j;
    out.shape = Shape{B};
    out.value.resize(static_cast<size_t>(B));
    out.needs_grad = nx.needs_grad;
    for (int i = 0; i < B; ++i)
      out.value[static_cast<size_t>(i)] = nx.value[static_cast<size_t>(i) * n + j];
    return push(std::move(out));
  }

  // Reverse sweep from a scalar loss. Gradients of bound tensors with
  // requires_grad accumulate into their .grad buffers. Consumes the tape.
  void backward(Var<T> loss) {
    if (consumed_) throw GraphError("backward: graph already consumed");
    const Node& ln = at(loss);
    if (ln.shape.numel() != 1) {
      throw GraphError(std::string("backward: loss must be scalar, got shape ") +
                       ln.shape.str());
    }
    consumed_ = true;
    if (!ln.needs_grad) return;
    for (Node& n : nodes_) {
      if (n.needs_grad) n.adjoint.assign(n.value.size(), T(0));
    }
    nodes_[static_cast<size_t>(loss.id)].adjoint[0] = T(1);
    for (int id = loss.id; id >= 0; --id) {
      Node& n = nodes_[static_cast<size_t>(id)];
      if (!n.needs_grad) continue;
      accumulate(n);
    }
    for (Node& n : nodes_) {
      if (n.op == Op::kLeaf && n.needs_grad && n.bound != nullptr) {
        Tensor<T>& t = *n.bound;
        if (t.grad.size() != t.values.size()) t.zero_grad();
        for (size_t i = 0; i < n.adjoint.size(); ++i) t.grad[i] += n.adjoint[i];
      }
    }
  }

  const Shape& shape(Var<T> v) const { return at(v).shape; }
  const std::vector<T>& value(Var<T> v) const { return at(v).value; }
  bool consumed() const { return consumed_; }
  int size() const { return static_cast<int>(nodes_.size()); }

  void reset() {
    nodes_.clear();
    consumed_ = false;
  }

 private:
  Var<T> push(Node&& n) {
    if (consumed_) throw GraphError("graph already consumed; reset() before reuse");
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  const Node& at(Var<T> v) const {
    if (v.g != this || v.id < 0 || v.id >= size()) {
      throw GraphError("variable does not belong to this graph");
    }
    return nodes_[static_cast<size_t>(v.id)];
  }

  Node elementwise_header(Op op, const Node& src, int a, int b = -1) {
    Node out;
    out.op = op;
    out.a = a;
    out.b = b;
    out.shape = src.shape;
    out.value.resize(src.value.size());
    out.needs_grad = src.needs_grad;
    return out;
  }

  Var<T> binary(Op op, Var<T> a, Var<T> b) {
    const Node& na = at(a);
    const Node& nb = at(b);
    if (na.shape != nb.shape) {
      throw ShapeError(std::string(op_name(op)) + ": shape mismatch " +
                       na.shape.str() + " vs " + nb.shape.str());
    }
    Node out = elementwise_header(op, na, a.id, b.id);
    out.needs_grad = na.needs_grad || nb.needs_grad;
    for (size_t i = 0; i < na.value.size(); ++i) {
      switch (op) {
        case Op::kAdd: out.value[i] = na.value[i] + nb.value[i]; break;
        case Op::kSub: out.value[i] = na.value[i] - nb.value[i]; break;
        case Op::kMul: out.value[i] = na.value[i] * nb.value[i]; break;
        default: throw GraphError("binary: bad op");
      }
    }
    return push(std::move(out));
  }

  Var<T> reduce(Op op, Var<T> x) {
    const Node& nx = at(x);
    Node out;
    out.op = op;
    out.a = x.id;
    out.shape = Shape{};
    out.needs_grad = nx.needs_grad;
    T acc = T(0);
    for (T v : nx.value) acc += v;
    if (op == Op::kMean) acc /= static_cast<T>(nx.value.size());
    out.value = {acc};
    return push(std::move(out));
  }

  static void im2col(const T* img, int H, int W, int C, int kh, int kw, T* col) {
    const int pad_h = (kh - 1) / 2;
    const int pad_w = (kw - 1) / 2;
    const int patch = kh * kw * C;
    std::int64_t r = 0;
    for (int oh = 0; oh < H; ++oh) {
      for (int ow = 0; ow < W; ++ow, ++r) {
        T* dst = col + r * patch;
        for (int dh = 0; dh < kh; ++dh) {
          int ih = oh + dh - pad_h;
          if (ih < 0 || ih >= H) {
            std::fill(dst, dst + static_cast<std::int64_t>(kw) * C, T(0));
            dst += static_cast<std::int64_t>(kw) * C;
            continue;
          }
          for (int dw = 0; dw < kw; ++dw) {
            int iw = ow + dw - pad_w;
            if (iw < 0 || iw >= W) {
              std::fill(dst, dst + C, T(0));
            } else {
              const T* src = img + (static_cast<std::int64_t>(ih) * W + iw) * C;
              std::copy(src, src + C, dst);
            }
            dst += C;
          }
        }
      }
    }
  }

  void add_into(int id, const T* d, size_t len) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad) return;
    for (size_t i = 0; i < len; ++i) n.adjoint[i] += d[i];
  }

  void accumulate(Node& n) {
    const T* d = n.adjoint.data();
    switch (n.op) {
      case Op::kLeaf:
        break;
      case Op::kMatmul: {
        Node& na = nodes_[static_cast<size_t>(n.a)];
        Node& nb = nodes_[static_cast<size_t>(n.b)];
        int m = na.shape[0], k = na.shape[1], c = nb.shape[1];
        CMapMat D(d, m, c);
        if (na.needs_grad) {
          CMapMat B(nb.value.data(), k, c);
          MapMat GA(na.adjoint.data(), m, k);
          GA.noalias() += D * B.transpose();
        }
        if (nb.needs_grad) {
          CMapMat A(na.value.data(), m, k);
          MapMat GB(nb.adjoint.data(), k, c);
          GB.noalias() += A.transpose() * D;
        }
        break;
      }
      case Op::kAddBias: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        Node& nb = nodes_[static_cast<size_t>(n.b)];
        int cols = nb.shape[0];
        std::int64_t rows = n.shape.numel() / cols;
        if (nx.needs_grad) add_into(n.a, d, n.value.size());
        if (nb.needs_grad) {
          for (std::int64_t r = 0; r < rows; ++r) {
            const T* row = d + r * cols;
            for (int j = 0; j < cols; ++j) nb.adjoint[static_cast<size_t>(j)] += row[j];
          }
        }
        break;
      }
      case Op::kConv2d: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        Node& nk = nodes_[static_cast<size_t>(n.b)];
        int B = nx.shape[0], H = nx.shape[1], W = nx.shape[2], C = nx.shape[3];
        int kh = nk.shape[0], kw = nk.shape[1], F = nk.shape[3];
        const int patch = kh * kw * C;
        const int pad_h = (kh - 1) / 2;
        const int pad_w = (kw - 1) / 2;
        std::vector<T> col(static_cast<size_t>(H) * W * patch);
        std::vector<T> dcol(col.size());
        for (int img = 0; img < B; ++img) {
          CMapMat D(d + static_cast<std::int64_t>(img) * H * W * F,
                    static_cast<std::int64_t>(H) * W, F);
          if (nk.needs_grad) {
            im2col(nx.value.data() + static_cast<std::int64_t>(img) * H * W * C,
                   H, W, C, kh, kw, col.data());
            CMapMat Col(col.data(), static_cast<std::int64_t>(H) * W, patch);
            MapMat GK(nk.adjoint.data(), patch, F);
            GK.noalias() += Col.transpose() * D;
          }
          if (nx.needs_grad) {
            CMapMat K(nk.value.data(), patch, F);
            MapMat DCol(dcol.data(), static_cast<std::int64_t>(H) * W, patch);
            DCol.noalias() = D * K.transpose();
            // col2im scatter-add
            T* gx = nx.adjoint.data() + static_cast<std::int64_t>(img) * H * W * C;
            std::int64_t r = 0;
            for (int oh = 0; oh < H; ++oh) {
              for (int ow = 0; ow < W; ++ow, ++r) {
                const T* drow = dcol.data() + r * patch;
                for (int dh = 0; dh < kh; ++dh) {
                  int ih = oh + dh - pad_h;
                  if (ih < 0 || ih >= H) continue;
                  for (int dw = 0; dw < kw; ++dw) {
                    int iw = ow + dw - pad_w;
                    if (iw < 0 || iw >= W) continue;
                    const T* s = drow + (static_cast<std::int64_t>(dh) * kw + dw) * C;
                    T* t = gx + (static_cast<std::int64_t>(ih) * W + iw) * C;
                    for (int c2 = 0; c2 < C; ++c2) t[c2] += s[c2];
                  }
                }
              }
            }
          }
        }
        break;
      }
      case Op::kMaxPool2d: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        if (!nx.needs_grad) break;
        int B = n.shape[0], Ho = n.shape[1], Wo = n.shape[2], C = n.shape[3];
        std::int64_t in_per_img = nx.shape.numel() / nx.shape[0];
        std::int64_t out_per_img = static_cast<std::int64_t>(Ho) * Wo * C;
        for (int img = 0; img < B; ++img) {
          T* gx = nx.adjoint.data() + img * in_per_img;
          const T* dg = d + img * out_per_img;
          const std::int32_t* arg = n.arg_index.data() + img * out_per_img;
          for (std::int64_t i = 0; i < out_per_img; ++i) gx[arg[i]] += dg[i];
        }
        break;
      }
      case Op::kRelu: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        if (!nx.needs_grad) break;
        for (size_t i = 0; i < n.value.size(); ++i)
          if (nx.value[i] > T(0)) nx.adjoint[i] += d[i];
        break;
      }
      case Op::kSigmoid: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        if (!nx.needs_grad) break;
        for (size_t i = 0; i < n.value.size(); ++i) {
          T s = n.value[i];
          nx.adjoint[i] += d[i] * s * (T(1) - s);
        }
        break;
      }
      case Op::kFlatten:
        add_into(n.a, d, n.value.size());
        break;
      case Op::kSum: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        if (!nx.needs_grad) break;
        for (size_t i = 0; i < nx.adjoint.size(); ++i) nx.adjoint[i] += d[0];
        break;
      }
      case Op::kMean: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        if (!nx.needs_grad) break;
        T w = d[0] / static_cast<T>(nx.value.size());
        for (size_t i = 0; i < nx.adjoint.size(); ++i) nx.adjoint[i] += w;
        break;
      }
      case Op::kSquare: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        if (!nx.needs_grad) break;
        for (size_t i = 0; i < n.value.size(); ++i)
          nx.adjoint[i] += T(2) * nx.value[i] * d[i];
        break;
      }
      case Op::kCos: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        if (!nx.needs_grad) break;
        for (size_t i = 0; i < n.value.size(); ++i)
          nx.adjoint[i] -= std::sin(nx.value[i]) * d[i];
        break;
      }
      case Op::kSoftmaxCrossEntropy: {
        Node& nl = nodes_[static_cast<size_t>(n.a)];
        if (!nl.needs_grad) break;
        int B = nl.shape[0], C = nl.shape[1];
        T w = d[0] / static_cast<T>(B);
        for (int i = 0; i < B; ++i) {
          const T* p = n.saved.data() + static_cast<std::int64_t>(i) * C;
          T* g = nl.adjoint.data() + static_cast<std::int64_t>(i) * C;
          std::int32_t y = n.labels[static_cast<size_t>(i)];
          for (int j = 0; j < C; ++j) g[j] += w * (p[j] - (j == y ? T(1) : T(0)));
        }
        break;
      }
      case Op::kAdd:
        add_into(n.a, d, n.value.size());
        add_into(n.b, d, n.value.size());
        break;
      case Op::kSub: {
        add_into(n.a, d, n.value.size());
        Node& nb = nodes_[static_cast<size_t>(n.b)];
        if (nb.needs_grad)
          for (size_t i = 0; i < n.value.size(); ++i) nb.adjoint[i] -= d[i];
        break;
      }
      case Op::kMul: {
        Node& na = nodes_[static_cast<size_t>(n.a)];
        Node& nb = nodes_[static_cast<size_t>(n.b)];
        if (na.needs_grad)
          for (size_t i = 0; i < n.value.size(); ++i)
            na.adjoint[i] += nb.value[i] * d[i];
        if (nb.needs_grad)
          for (size_t i = 0; i < n.value.size(); ++i)
            nb.adjoint[i] += na.value[i] * d[i];
        break;
      }
      case Op::kScale: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        if (!nx.needs_grad) break;
        for (size_t i = 0; i < n.value.size(); ++i) nx.adjoint[i] += n.scalar * d[i];
        break;
      }
      case Op::kAddConst:
        add_into(n.a, d, n.value.size());
        break;
      case Op::kSelectCol: {
        Node& nx = nodes_[static_cast<size_t>(n.a)];
        if (!nx.needs_grad) break;
        int B = n.shape[0], cols = nx.shape[1];
        for (int i = 0; i < B; ++i)
          nx.adjoint[static_cast<size_t>(i) * cols + n.col] += d[i];
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Expression-style free functions and operators.

template <typename T> Var<T> matmul(Var<T> a, Var<T> b) { return a.g->matmul(a, b); }
template <typename T> Var<T> add_bias(Var<T> x, Var<T> b) { return x.g->add_bias(x, b); }
template <typename T> Var<T> conv2d(Var<T> x, Var<T> k) { return x.g->conv2d(x, k); }
template <typename T> Var<T> maxpool2d(Var<T> x) { return x.g->maxpool2d(x); }
template <typename T> Var<T> relu(Var<T> x) { return x.g->relu(x); }
template <typename T> Var<T> sigmoid(Var<T> x) { return x.g->sigmoid(x); }
template <typename T> Var<T> flatten(Var<T> x) { return x.g->flatten(x); }
template <typename T> Var<T> sum(Var<T> x) { return x.g->sum(x); }
template <typename T> Var<T> mean(Var<T> x) { return x.g->mean(x); }
template <typename T> Var<T> square(Var<T> x) { return x.g->square(x); }
template <typename T> Var<T> cos(Var<T> x) { return x.g->cos(x); }
template <typename T> Var<T> select_col(Var<T> x, int j) { return x.g->select_col(x, j); }
template <typename T>
Var<T> softmax_cross_entropy(Var<T> logits, std::span<const std::int32_t> labels) {
  return logits.g->softmax_cross_entropy(logits, labels);
}

template <typename T> Var<T> operator+(Var<T> a, Var<T> b) { return a.g->add(a, b); }
template <typename T> Var<T> operator-(Var<T> a, Var<T> b) { return a.g->sub(a, b); }
template <typename T> Var<T> operator*(Var<T> a, Var<T> b) { return a.g->mul(a, b); }
template <typename T> Var<T> operator*(T c, Var<T> x) { return x.g->scale(x, c); }
template <typename T> Var<T> operator*(Var<T> x, T c) { return x.g->scale(x, c); }
template <typename T> Var<T> operator+(Var<T> x, T c) { return x.g->add_const(x, c); }
template <typename T> Var<T> operator-(Var<T> x, T c) { return x.g->add_const(x, -c); }
template <typename T> Var<T> operator-(Var<T> x) { return x.g->scale(x, T(-1)); }

// affine: x * W + b as a composition of the matmul and add_bias primitives.
template <typename T>
Var<T> affine(Var<T> x, Var<T> w, Var<T> b) {
  return add_bias(matmul(x, w), b);
}

// 0.5 * sum of squared entries over a set of tensors.
template <typename T>
Var<T> l2_penalty(std::span<const Var<T>> weights) {
  if (weights.empty()) throw GraphError("l2_penalty: empty weight list");
  Var<T> acc = sum(square(weights[0]));
  for (size_t i = 1; i < weights.size(); ++i) acc = acc + sum(square(weights[i]));
  return T(0.5) * acc;
}

}  // namespace optbench
