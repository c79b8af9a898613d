// Reverse-mode automatic differentiation over small dense matrices.
//
// A Graph is a tape: every operation appends a node holding its value and a
// closure that propagates the node's gradient to its inputs. Nodes are
// created in topological order, so backward() just walks the tape in
// reverse. One graph per logical thread; discard it after backward().
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "decor/nn/param_store.hpp"
#include "decor/nn/tensor.hpp"

namespace decor::nn {

struct Var {
  std::size_t id = 0;
};

class Graph {
 public:
  Graph() { nodes_.reserve(256); }
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& grad(Var v) const { return nodes_[v.id].grad; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor t) { return push(std::move(t), false, nullptr); }

  // Leaf bound to a named parameter; repeated calls return the same node.
  Var param(const ParamStore& store, const std::string& name) {
    auto it = param_nodes_.find(name);
    if (it != param_nodes_.end()) return it->second;
    Var v = push(store.value(name), true, nullptr);
    param_nodes_.emplace(name, v);
    param_order_.push_back(name);
    return v;
  }

  // Gradients of every parameter touched by this graph, in first-use order.
  std::vector<std::pair<std::string, const Tensor*>> param_grads() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    for (const auto& name : param_order_) out.emplace_back(name, &nodes_[param_nodes_.at(name).id].grad);
    return out;
  }

  void accumulate_into(ParamStore& store) const {
    for (const auto& [name, g] : param_grads()) store.accumulate_grad(name, *g);
  }

  void backward(Var loss) {
    Node& root = nodes_[loss.id];
    if (root.value.numel() != 1) throw Error("backward: loss must be a scalar, got shape " + shape_str(root.value));
    if (backward_done_) throw Error("backward: graph already differentiated");
    backward_done_ = true;
    for (auto& n : nodes_) {
      if (n.requires_grad) n.grad = Tensor(n.value.shape);
    }
    if (!root.requires_grad) return;
    root.grad.data[0] = 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.requires_grad) n.backward(*this, i);
    }
  }

  // ---- operations -------------------------------------------------------

  Var matmul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.cols() != B.rows()) {
      throw Error("matmul: shape mismatch " + shape_str(A) + " x " + shape_str(B));
    }
    const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
    Tensor C({n, m});
    gemm(A.data.data(), B.data.data(), C.data.data(), n, k, m);
    return push(std::move(C), needs(a) || needs(b), [a, b, n, k, m](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      if (g.needs(a)) {
        // dA = G * B^T
        const Tensor& Bv = g.value(b);
        Tensor& dA = g.nodes_[a.id].grad;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < m; ++j) {
            const double gij = G.data[i * m + j];
            if (gij == 0.0) continue;
            for (std::size_t p = 0; p < k; ++p) dA.data[i * k + p] += gij * Bv.data[p * m + j];
          }
      }
      if (g.needs(b)) {
        // dB = A^T * G
        const Tensor& Av = g.value(a);
        Tensor& dB = g.nodes_[b.id].grad;
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double aip = Av.data[i * k + p];
            if (aip == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) dB.data[p * m + j] += aip * G.data[i * m + j];
          }
      }
    });
  }

  Var transpose(Var a) {
    const Tensor& A = value(a);
    const std::size_t r = A.rows(), c = A.cols();
    Tensor T({c, r});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) T.data[j * r + i] = A.data[i * c + j];
    return push(std::move(T), needs(a), [a, r, c](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      Tensor& dA = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) dA.data[i * c + j] += G.data[j * r + i];
    });
  }

  Var add(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw Error("add: shape mismatch " + shape_str(A) + " + " + shape_str(B));
    Tensor C = A;
    for (std::size_t i = 0; i < C.numel(); ++i) C.data[i] += B.data[i];
    return push(std::move(C), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      for (Var v : {a, b}) {
        if (!g.needs(v)) continue;
        Tensor& d = g.nodes_[v.id].grad;
        for (std::size_t i = 0; i < G.numel(); ++i) d.data[i] += G.data[i];
      }
    });
  }

  Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

  // Adds a row vector to every row of `a`.
  Var add_row(Var a, Var bias) {
    const Tensor& A = value(a);
    const Tensor& b = value(bias);
    if (b.numel() != A.cols()) throw Error("add_row: bias length " + shape_str(b) + " vs " + shape_str(A));
    Tensor C = A;
    const std::size_t r = A.rows(), c = A.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) C.data[i * c + j] += b.data[j];
    return push(std::move(C), needs(a) || needs(bias), [a, bias, r, c](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      if (g.needs(a)) {
        Tensor& d = g.nodes_[a.id].grad;
        for (std::size_t i = 0; i < G.numel(); ++i) d.data[i] += G.data[i];
      }
      if (g.needs(bias)) {
        Tensor& d = g.nodes_[bias.id].grad;
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) d.data[j] += G.data[i * c + j];
      }
    });
  }

  Var scale(Var a, double s) {
    Tensor C = value(a);
    for (double& x : C.data) x *= s;
    return push(std::move(C), needs(a), [a, s](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      Tensor& d = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < G.numel(); ++i) d.data[i] += s * G.data[i];
    });
  }

  // Elementwise product.
  Var mul(Var a, Var b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (!A.same_shape(B)) throw Error("mul: shape mismatch " + shape_str(A) + " * " + shape_str(B));
    Tensor C = A;
    for (std::size_t i = 0; i < C.numel(); ++i) C.data[i] *= B.data[i];
    return push(std::move(C), needs(a) || needs(b), [a, b](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      if (g.needs(a)) {
        const Tensor& Bv = g.value(b);
        Tensor& d = g.nodes_[a.id].grad;
        for (std::size_t i = 0; i < G.numel(); ++i) d.data[i] += G.data[i] * Bv.data[i];
      }
      if (g.needs(b)) {
        const Tensor& Av = g.value(a);
        Tensor& d = g.nodes_[b.id].grad;
        for (std::size_t i = 0; i < G.numel(); ++i) d.data[i] += G.data[i] * Av.data[i];
      }
    });
  }

  Var relu(Var a) {
    Tensor C = value(a);
    for (double& x : C.data) x = x > 0.0 ? x : 0.0;
    return push(std::move(C), needs(a), [a](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      const Tensor& X = g.value(a);
      Tensor& d = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < G.numel(); ++i) d.data[i] += X.data[i] > 0.0 ? G.data[i] : 0.0;
    });
  }

  Var sigmoid(Var a) {
    Tensor C = value(a);
    for (double& x : C.data) x = 1.0 / (1.0 + std::exp(-x));
    return push(std::move(C), needs(a), [a](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      const Tensor& Y = g.nodes_[self].value;
      Tensor& d = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < G.numel(); ++i) d.data[i] += G.data[i] * Y.data[i] * (1.0 - Y.data[i]);
    });
  }

  Var log(Var a) {
    Tensor C = value(a);
    for (double& x : C.data) x = std::log(x);
    return push(std::move(C), needs(a), [a](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      const Tensor& X = g.value(a);
      Tensor& d = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < G.numel(); ++i) d.data[i] += G.data[i] / X.data[i];
    });
  }

  Var sum(Var a) {
    double s = 0.0;
    for (double x : value(a).data) s += x;
    return push(Tensor({1, 1}, {s}), needs(a), [a](Graph& g, std::size_t self) {
      const double G = g.nodes_[self].grad.data[0];
      for (double& d : g.nodes_[a.id].grad.data) d += G;
    });
  }

  // Softmax along axis 1 (each row) or axis 0 (each column).
  Var softmax(Var a, int axis = 1) {
    const Tensor& A = value(a);
    if (axis != 0 && axis != 1) throw Error("softmax: axis must be 0 or 1");
    const std::size_t r = A.rows(), c = A.cols();
    if ((axis == 1 && c == 0) || (axis == 0 && r == 0)) throw Error("softmax: empty axis");
    // axis 0 is handled as axis 1 on the transpose
    if (axis == 0) return transpose(softmax(transpose(a), 1));
    Tensor Y = A;
    for (std::size_t i = 0; i < r; ++i) softmax_inplace(std::span<double>(Y.data.data() + i * c, c));
    return push(std::move(Y), needs(a), [a, r, c](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      const Tensor& Yv = g.nodes_[self].value;
      Tensor& d = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < r; ++i) {
        double dotgy = 0.0;
        for (std::size_t j = 0; j < c; ++j) dotgy += G.data[i * c + j] * Yv.data[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          d.data[i * c + j] += Yv.data[i * c + j] * (G.data[i * c + j] - dotgy);
        }
      }
    });
  }

  // Row-wise log-softmax restricted to entries with mask true. Masked
  // entries come out as -inf and receive no gradient.
  Var log_softmax(Var a, const std::vector<bool>& mask = {}) {
    const Tensor& A = value(a);
    const std::size_t r = A.rows(), c = A.cols();
    if (!mask.empty() && mask.size() != c) throw Error("log_softmax: mask length mismatch");
    auto on = [&mask](std::size_t j) { return mask.empty() || mask[j]; };
    Tensor Y({r, c});
    for (std::size_t i = 0; i < r; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < c; ++j)
        if (on(j)) mx = std::max(mx, A.data[i * c + j]);
      if (!std::isfinite(mx)) throw Error("log_softmax: every entry is masked");
      double s = 0.0;
      for (std::size_t j = 0; j < c; ++j)
        if (on(j)) s += std::exp(A.data[i * c + j] - mx);
      const double lse = mx + std::log(s);
      for (std::size_t j = 0; j < c; ++j) {
        Y.data[i * c + j] = on(j) ? A.data[i * c + j] - lse : -std::numeric_limits<double>::infinity();
      }
    }
    return push(std::move(Y), needs(a), [a, r, c, mask](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      const Tensor& Yv = g.nodes_[self].value;
      Tensor& d = g.nodes_[a.id].grad;
      auto on = [&mask](std::size_t j) { return mask.empty() || mask[j]; };
      for (std::size_t i = 0; i < r; ++i) {
        double gs = 0.0;
        for (std::size_t j = 0; j < c; ++j)
          if (on(j)) gs += G.data[i * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          if (!on(j)) continue;
          d.data[i * c + j] += G.data[i * c + j] - std::exp(Yv.data[i * c + j]) * gs;
        }
      }
    });
  }

  // Scalar element (i, j).
  Var pick(Var a, std::size_t i, std::size_t j) {
    const Tensor& A = value(a);
    if (i >= A.rows() || j >= A.cols()) throw Error("pick: index out of range");
    const std::size_t c = A.cols();
    return push(Tensor({1, 1}, {A.data[i * c + j]}), needs(a), [a, i, j, c](Graph& g, std::size_t self) {
      g.nodes_[a.id].grad.data[i * c + j] += g.nodes_[self].grad.data[0];
    });
  }

  Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    const Tensor& A = value(a);
    if (begin > end || end > A.cols()) throw Error("slice_cols: bad range");
    const std::size_t r = A.rows(), c = A.cols(), w = end - begin;
    Tensor C({r, w});
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < w; ++j) C.data[i * w + j] = A.data[i * c + begin + j];
    return push(std::move(C), needs(a), [a, r, c, w, begin](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      Tensor& d = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < w; ++j) d.data[i * c + begin + j] += G.data[i * w + j];
    });
  }

  Var select_cols(Var a, std::vector<std::size_t> cols) {
    const Tensor& A = value(a);
    const std::size_t r = A.rows(), c = A.cols(), w = cols.size();
    Tensor C({r, w});
    for (std::size_t j = 0; j < w; ++j) {
      if (cols[j] >= c) throw Error("select_cols: index out of range");
      for (std::size_t i = 0; i < r; ++i) C.data[i * w + j] = A.data[i * c + cols[j]];
    }
    return push(std::move(C), needs(a), [a, r, c, w, cols = std::move(cols)](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      Tensor& d = g.nodes_[a.id].grad;
      for (std::size_t j = 0; j < w; ++j)
        for (std::size_t i = 0; i < r; ++i) d.data[i * c + cols[j]] += G.data[i * w + j];
    });
  }

  // Rows of `a` at the given indices (indices may repeat).
  Var gather_rows(Var a, std::vector<std::size_t> rows) {
    const Tensor& A = value(a);
    const std::size_t c = A.cols(), n = rows.size();
    Tensor C({n, c});
    for (std::size_t i = 0; i < n; ++i) {
      if (rows[i] >= A.rows()) throw Error("gather_rows: index out of range");
      std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(rows[i] * c), c,
                  C.data.begin() + static_cast<std::ptrdiff_t>(i * c));
    }
    return push(std::move(C), needs(a), [a, c, n, rows = std::move(rows)](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      Tensor& d = g.nodes_[a.id].grad;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) d.data[rows[i] * c + j] += G.data[i * c + j];
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_cols: nothing to concatenate");
    const std::size_t r = value(parts[0]).rows();
    std::size_t total = 0;
    bool rg = false;
    for (Var p : parts) {
      if (value(p).rows() != r) throw Error("concat_cols: row count mismatch");
      total += value(p).cols();
      rg = rg || needs(p);
    }
    Tensor C({r, total});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& P = value(p);
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < P.cols(); ++j) C.data[i * total + off + j] = P.data[i * P.cols() + j];
      off += P.cols();
    }
    return push(std::move(C), rg, [parts, r, total](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      std::size_t off = 0;
      for (Var p : parts) {
        const std::size_t w = g.value(p).cols();
        if (g.needs(p)) {
          Tensor& d = g.nodes_[p.id].grad;
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < w; ++j) d.data[i * w + j] += G.data[i * total + off + j];
        }
        off += w;
      }
    });
  }

  Var concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw Error("concat_rows: nothing to concatenate");
    const std::size_t c = value(parts[0]).cols();
    std::size_t total = 0;
    bool rg = false;
    for (Var p : parts) {
      if (value(p).cols() != c) throw Error("concat_rows: column count mismatch");
      total += value(p).rows();
      rg = rg || needs(p);
    }
    Tensor C({total, c});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor& P = value(p);
      std::copy(P.data.begin(), P.data.end(), C.data.begin() + static_cast<std::ptrdiff_t>(off * c));
      off += P.rows();
    }
    return push(std::move(C), rg, [parts, c](Graph& g, std::size_t self) {
      const Tensor& G = g.nodes_[self].grad;
      std::size_t off = 0;
      for (Var p : parts) {
        const std::size_t n = g.value(p).numel();
        if (g.needs(p)) {
          Tensor& d = g.nodes_[p.id].grad;
          for (std::size_t i = 0; i < n; ++i) d.data[i] += G.data[off * c + i];
        }
        off += g.value(p).rows();
      }
    });
  }

  // ---- helpers shared with inference code -------------------------------

  static void softmax_inplace(std::span<double> v) {
    double mx = -std::numeric_limits<double>::infinity();
    for (double x : v) mx = std::max(mx, x);
    double s = 0.0;
    for (double& x : v) {
      x = std::exp(x - mx);
      s += x;
    }
    for (double& x : v) x /= s;
  }

  static void gemm(const double* A, const double* B, double* C, std::size_t n, std::size_t k, std::size_t m) {
    for (std::size_t i = 0; i < n; ++i) {
      double* ci = C + i * m;
      for (std::size_t p = 0; p < k; ++p) {
        const double a = A[i * k + p];
        if (a == 0.0) continue;
        const double* bp = B + p * m;
        for (std::size_t j = 0; j < m; ++j) ci[j] += a * bp[j];
      }
    }
  }

 private:
  using Backward = std::function<void(Graph&, std::size_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
  };

  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  Var push(Tensor value, bool requires_grad, Backward bw) {
    nodes_.push_back(Node{std::move(value), {}, requires_grad, requires_grad ? std::move(bw) : nullptr});
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> param_nodes_;
  std::vector<std::string> param_order_;
  bool backward_done_ = false;
};

}  // namespace decor::nn
