#pragma once

// Dense 2-D tensors with reverse-mode automatic differentiation.
//
// Every op whose inputs require gradients records a node carrying a
// monotonically increasing sequence number. backward() gathers the nodes
// reachable from the loss and replays them in exact reverse of recording
// order; that ordered list is the computation tape.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "divrank/data_model.hpp"

namespace divrank::ad {

class Tensor;

namespace detail {

struct Node {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool leaf = true;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

inline std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{0};
  return ++counter;
}

}  // namespace detail

class Tensor {
 public:
  Tensor() : Tensor(0, 0) {}

  Tensor(std::size_t rows, std::size_t cols, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    node_->rows = rows;
    node_->cols = cols;
    node_->value.assign(rows * cols, 0.0);
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_seq();
  }

  Tensor(std::size_t rows, std::size_t cols, std::vector<double> data, bool requires_grad = false)
      : Tensor(rows, cols, requires_grad) {
    if (data.size() != rows * cols) {
      throw ValidationError("tensor data length " + std::to_string(data.size()) + " does not match shape " +
                            std::to_string(rows) + "x" + std::to_string(cols));
    }
    node_->value = std::move(data);
  }

  /// Builds a tensor from nested rows, e.g. {{1,2},{3,4}}.
  static Tensor from_rows(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.front().size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw ValidationError("ragged rows in tensor literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor(r, c, std::move(data), requires_grad);
  }

  static Tensor row_vector(const Vector& v, bool requires_grad = false) {
    return Tensor(1, v.size(), v, requires_grad);
  }

  /// Trainable leaf initialized uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
  static Tensor parameter(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
    Tensor t(rows, cols, true);
    const double bound = rows ? 1.0 / std::sqrt(static_cast<double>(rows)) : 0.0;
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (double& v : t.node_->value) v = dist(rng);
    return t;
  }

  std::size_t rows() const { return node_->rows; }
  std::size_t cols() const { return node_->cols; }
  std::size_t size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->leaf; }
  std::string shape_str() const { return std::to_string(rows()) + "x" + std::to_string(cols()); }

  std::span<double> data() { return node_->value; }
  std::span<const double> data() const { return node_->value; }
  double& operator()(std::size_t r, std::size_t c) { return node_->value[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }
  double item() const {
    if (size() != 1) throw ValidationError("item() on non-scalar tensor " + shape_str());
    return node_->value[0];
  }

  bool has_grad() const { return node_->grad.size() == node_->value.size() && size() > 0; }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }
  void clear_grad() { node_->grad.clear(); }

  Vector to_vector() const { return node_->value; }

  /// Value copy detached from any recorded history.
  Tensor detach() const { return Tensor(rows(), cols(), node_->value, false); }

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  static Tensor make_result(std::size_t rows, std::size_t cols, std::initializer_list<Tensor> inputs,
                            std::function<void(detail::Node&)> backward_fn) {
    Tensor out(rows, cols);
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      out.node_->requires_grad = true;
      out.node_->leaf = false;
      for (const auto& in : inputs) out.node_->parents.push_back(in.node_);
      out.node_->backward_fn = std::move(backward_fn);
    }
    return out;
  }

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw ValidationError(std::string(op) + ": incompatible shapes " + a.shape_str() + " and " + b.shape_str());
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) detail::shape_error("matmul", a, b);
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  auto an = a.node(), bn = b.node();
  Tensor out = Tensor::make_result(n, m, {a, b}, [an, bn, n, k, m](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += self.grad[i * m + j] * bn->value[p * m + j];
          an->grad[i * k + p] += s;
        }
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < m; ++j) {
          double s = 0.0;
          for (std::size_t i = 0; i < n; ++i) s += an->value[i * k + p] * self.grad[i * m + j];
          bn->grad[p * m + j] += s;
        }
    }
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = an->value[i * k + p];
      for (std::size_t j = 0; j < m; ++j) o[i * m + j] += av * bn->value[p * m + j];
    }
  return out;
}

/// Elementwise sum; b may also be a 1xcols row vector broadcast over a's rows.
inline Tensor add(const Tensor& a, const Tensor& b) {
  const bool broadcast = b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols();
  if (!broadcast && (a.rows() != b.rows() || a.cols() != b.cols())) detail::shape_error("add", a, b);
  const std::size_t r = a.rows(), c = a.cols();
  auto an = a.node(), bn = b.node();
  Tensor out = Tensor::make_result(r, c, {a, b}, [an, bn, r, c, broadcast](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < r * c; ++i) an->grad[i] += self.grad[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < r * c; ++i) bn->grad[broadcast ? i % c : i] += self.grad[i];
    }
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < r * c; ++i) o[i] = an->value[i] + bn->value[broadcast ? i % c : i];
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) detail::shape_error("mul", a, b);
  const std::size_t n = a.size();
  auto an = a.node(), bn = b.node();
  Tensor out = Tensor::make_result(a.rows(), a.cols(), {a, b}, [an, bn, n](detail::Node& self) {
    if (an->requires_grad) {
      an->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * bn->value[i];
    }
    if (bn->requires_grad) {
      bn->ensure_grad();
      for (std::size_t i = 0; i < n; ++i) bn->grad[i] += self.grad[i] * an->value[i];
    }
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < n; ++i) o[i] = an->value[i] * bn->value[i];
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  const std::size_t n = a.size();
  auto an = a.node();
  Tensor out = Tensor::make_result(a.rows(), a.cols(), {a}, [an, n, s](detail::Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) an->grad[i] += s * self.grad[i];
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < n; ++i) o[i] = s * an->value[i];
  return out;
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto an = a.node();
  Tensor out = Tensor::make_result(c, r, {a}, [an, r, c](detail::Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j * r + i];
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[j * r + i] = an->value[i * c + j];
  return out;
}

/// Horizontal concatenation of tensors with equal row counts.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValidationError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) detail::shape_error("concat_cols", parts.front(), p);
    total += p.cols();
  }
  Tensor out(r, total);
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  auto& o = out.node()->value;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < p.cols(); ++j) o[i * total + offset + j] = p(i, j);
    offset += p.cols();
  }
  if (any) {
    auto node = out.node();
    node->requires_grad = true;
    node->leaf = false;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward_fn = [r, total](detail::Node& self) {
      std::size_t off = 0;
      for (auto& pn : self.parents) {
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < pn->cols; ++j) pn->grad[i * pn->cols + j] += self.grad[i * total + off + j];
        }
        off += pn->cols;
      }
    };
  }
  return out;
}

/// Vertical stacking of tensors with equal column counts.
inline Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ValidationError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) detail::shape_error("concat_rows", parts.front(), p);
    total += p.rows();
  }
  Tensor out(total, c);
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  auto& o = out.node()->value;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + static_cast<std::ptrdiff_t>(offset * c));
    offset += p.rows();
  }
  if (any) {
    auto node = out.node();
    node->requires_grad = true;
    node->leaf = false;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward_fn = [c](detail::Node& self) {
      std::size_t off = 0;
      for (auto& pn : self.parents) {
        if (pn->requires_grad) {
          pn->ensure_grad();
          for (std::size_t i = 0; i < pn->rows * c; ++i) pn->grad[i] += self.grad[off * c + i];
        }
        off += pn->rows;
      }
    };
  }
  return out;
}

/// Selects rows of a table by index (embedding lookup).
inline Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
  const std::size_t c = table.cols();
  for (std::size_t idx : indices) {
    if (idx >= table.rows()) throw ValidationError("gather_rows: index out of range");
  }
  auto tn = table.node();
  Tensor out = Tensor::make_result(indices.size(), c, {table}, [tn, indices, c](detail::Node& self) {
    tn->ensure_grad();
    for (std::size_t i = 0; i < indices.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) tn->grad[indices[i] * c + j] += self.grad[i * c + j];
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < indices.size(); ++i)
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] = tn->value[indices[i] * c + j];
  return out;
}

inline Tensor softmax_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto an = a.node();
  Tensor out = Tensor::make_result(r, c, {a}, [an, r, c](detail::Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * self.value[i * c + j];
      for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.value[i * c + j] * (self.grad[i * c + j] - dot);
    }
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, an->value[i * c + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += o[i * c + j] = std::exp(an->value[i * c + j] - mx);
    for (std::size_t j = 0; j < c; ++j) o[i * c + j] /= sum;
  }
  return out;
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  const std::size_t n = a.size();
  auto an = a.node();
  Tensor out = Tensor::make_result(a.rows(), a.cols(), {a}, [an, n](detail::Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) an->grad[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < n; ++i) o[i] = sigmoid_scalar(an->value[i]);
  return out;
}

inline Tensor relu(const Tensor& a) {
  const std::size_t n = a.size();
  auto an = a.node();
  Tensor out = Tensor::make_result(a.rows(), a.cols(), {a}, [an, n](detail::Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n; ++i)
      if (an->value[i] > 0.0) an->grad[i] += self.grad[i];
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < n; ++i) o[i] = an->value[i] > 0.0 ? an->value[i] : 0.0;
  return out;
}

/// Sums over rows, giving a 1 x cols row vector.
inline Tensor sum_rows(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  auto an = a.node();
  Tensor out = Tensor::make_result(1, c, {a}, [an, r, c](detail::Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) an->grad[i * c + j] += self.grad[j];
  });
  auto& o = out.node()->value;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) o[j] += an->value[i * c + j];
  return out;
}

inline Tensor mean_rows(const Tensor& a) {
  if (a.rows() == 0) throw ValidationError("mean_rows: empty tensor");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

inline Tensor sum_all(const Tensor& a) {
  const std::size_t n = a.size();
  auto an = a.node();
  Tensor out = Tensor::make_result(1, 1, {a}, [an, n](detail::Node& self) {
    an->ensure_grad();
    for (std::size_t i = 0; i < n; ++i) an->grad[i] += self.grad[0];
  });
  double s = 0.0;
  for (double v : an->value) s += v;
  out.node()->value[0] = s;
  return out;
}

/// Mean softmax cross-entropy of each logit row against a class index.
inline Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
  const std::size_t r = logits.rows(), c = logits.cols();
  if (targets.size() != r) throw ValidationError("softmax_cross_entropy: target count mismatch");
  for (std::size_t t : targets)
    if (t >= c) throw ValidationError("softmax_cross_entropy: class index out of range");
  std::vector<double> probs(r * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c; ++j) mx = std::max(mx, logits(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += probs[i * c + j] = std::exp(logits(i, j) - mx);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= sum;
    loss += -(logits(i, targets[i]) - mx - std::log(sum));
  }
  auto ln = logits.node();
  Tensor out = Tensor::make_result(1, 1, {logits}, [ln, probs, targets, r, c](detail::Node& self) {
    ln->ensure_grad();
    const double g = self.grad[0] / static_cast<double>(r);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j)
        ln->grad[i * c + j] += g * (probs[i * c + j] - (j == targets[i] ? 1.0 : 0.0));
  });
  out.node()->value[0] = loss / static_cast<double>(r);
  return out;
}

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate;
/// intermediate gradients are reset on every call.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1) throw ValidationError("backward: loss must be scalar, got " + loss.shape_str());
  if (!loss.requires_grad() || loss.is_leaf()) throw ValidationError("backward: loss has no recorded operations");
  std::vector<detail::Node*> tape;
  std::unordered_set<detail::Node*> seen;
  std::vector<detail::Node*> stack{loss.node().get()};
  while (!stack.empty()) {
    detail::Node* n = stack.back();
    stack.pop_back();
    if (!seen.insert(n).second) continue;
    tape.push_back(n);
    for (auto& p : n->parents)
      if (p->requires_grad) stack.push_back(p.get());
  }
  std::sort(tape.begin(), tape.end(), [](const detail::Node* a, const detail::Node* b) { return a->seq > b->seq; });
  for (detail::Node* n : tape)
    if (!n->leaf) n->grad.assign(n->value.size(), 0.0);
  loss.node()->grad[0] = 1.0;
  for (detail::Node* n : tape)
    if (n->backward_fn) n->backward_fn(*n);
}

/// p <- p - lr * grad, then zero the gradient.
inline void sgd_step(std::span<Tensor> params, double lr) {
  for (auto& p : params)
    if (!p.has_grad()) throw ValidationError("sgd_step: parameter " + p.shape_str() + " has no gradient");
  for (auto& p : params) {
    auto v = p.data();
    auto g = p.grad();
    if (lr != 0.0)
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * g[i];
    p.zero_grad();
  }
}

/// Adam with bias correction. Moments are kept per parameter in the order
/// the parameters are passed; gradients are zeroed after the step.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::span<Tensor> params) {
    for (auto& p : params)
      if (!p.has_grad()) throw ValidationError("adam: parameter " + p.shape_str() + " has no gradient");
    if (m_.empty()) {
      for (auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ValidationError("adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto w = params[k].data();
      auto g = params[k].grad();
      if (w.size() != m_[k].size()) throw ValidationError("adam: parameter shape changed between steps");
      for (std::size_t i = 0; i < w.size(); ++i) {
        m_[k][i] = b1_ * m_[k][i] + (1.0 - b1_) * g[i];
        v_[k][i] = b2_ * v_[k][i] + (1.0 - b2_) * g[i] * g[i];
        if (lr_ != 0.0) w[i] -= lr_ * (m_[k][i] / c1) / (std::sqrt(v_[k][i] / c2) + eps_);
      }
      params[k].zero_grad();
    }
  }

 private:
  double lr_, b1_, b2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Checkpoints: text header, then one block per named tensor with row-major
// values printed at round-trip precision.

inline constexpr const char* kCheckpointMagic = "divrank-checkpoint";
inline constexpr int kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

inline std::string checkpoint_to_string(const NamedTensors& tensors) {
  std::ostringstream out;
  out << kCheckpointMagic << " v" << kCheckpointVersion << "\n" << tensors.size() << "\n";
  out << std::setprecision(17);
  for (const auto& [name, t] : tensors) {
    out << name << " " << t.rows() << " " << t.cols() << "\n";
    for (std::size_t i = 0; i < t.size(); ++i) out << (i ? " " : "") << t.data()[i];
    out << "\n";
  }
  return out.str();
}

inline NamedTensors checkpoint_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string magic, version;
  in >> magic >> version;
  if (magic != kCheckpointMagic) throw ValidationError("not a checkpoint file");
  if (version != "v" + std::to_string(kCheckpointVersion)) throw ValidationError("unsupported checkpoint version " + version);
  std::size_t count = 0;
  if (!(in >> count)) throw ValidationError("checkpoint: missing tensor count");
  NamedTensors out;
  for (std::size_t k = 0; k < count; ++k) {
    std::string name;
    std::size_t r = 0, c = 0;
    if (!(in >> name >> r >> c)) throw ValidationError("checkpoint: truncated header for tensor " + std::to_string(k));
    std::vector<double> data(r * c);
    for (double& v : data)
      if (!(in >> v)) throw ValidationError("checkpoint: truncated data for '" + name + "'");
    out.emplace_back(name, Tensor(r, c, std::move(data), true));
  }
  return out;
}

inline void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  write_text(path, checkpoint_to_string(tensors));
}

inline NamedTensors load_checkpoint(const std::string& path) { return checkpoint_from_string(read_text(path)); }

}  // namespace divrank::ad
