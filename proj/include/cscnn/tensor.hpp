#pragma once

// Dense row-major tensors with reverse-mode autodiff on a per-thread tape.
// Feature maps are laid out H x W x C so channel reductions run over a
// contiguous inner loop. Scalar type is a template parameter: float for
// training, double for gradient checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace cscnn {

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

inline long long shape_numel(const Shape& s) {
  long long n = 1;
  for (int e : s) {
    if (e <= 0) throw ShapeError("non-positive extent " + std::to_string(e));
    n *= e;
  }
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated iff requires_grad
  bool requires_grad = false;

  void ensure_grad() {
    requires_grad = true;
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

// Execution-ordered record of backward closures; traversed in exact reverse.
template <typename S>
class Tape {
 public:
  static Tape& current() {
    thread_local Tape tape;
    return tape;
  }

  void record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }
  size_t size() const { return entries_.size(); }

  void run_backward() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  }

  void clear() { entries_.clear(); }

 private:
  std::vector<std::function<void()>> entries_;
};

template <typename S>
class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<S> value, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<S>>()) {
    if (shape_numel(shape) != static_cast<long long>(value.size()))
      throw ShapeError("value size " + std::to_string(value.size()) +
                       " does not match shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(value);
    if (requires_grad) node_->ensure_grad();
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<S>(n, S(0)), requires_grad);
  }

  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    return Tensor(std::move(shape), std::vector<S>(n, v), requires_grad);
  }

  static Tensor scalar(S v) { return Tensor({1}, {v}); }

  static Tensor randu(Shape shape, S lo, S hi, std::mt19937_64& rng,
                      bool requires_grad = false) {
    size_t n = static_cast<size_t>(shape_numel(shape));
    std::vector<S> v(n);
    std::uniform_real_distribution<double> dist(static_cast<double>(lo),
                                                static_cast<double>(hi));
    for (auto& x : v) x = static_cast<S>(dist(rng));
    return Tensor(std::move(shape), std::move(v), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  const std::vector<S>& value() const { return node_->value; }
  std::vector<S>& value() { return node_->value; }
  const std::vector<S>& grad() const { return node_->grad; }
  std::vector<S>& grad() { return node_->grad; }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  long long numel() const { return static_cast<long long>(node_->value.size()); }
  S at(long long i) const { return node_->value[static_cast<size_t>(i)]; }

  void set_requires_grad() { node_->ensure_grad(); }
  void zero_grad() {
    if (node_->requires_grad) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
  }

  std::shared_ptr<TensorNode<S>> node() const { return node_; }

 private:
  std::shared_ptr<TensorNode<S>> node_;
};

// Thread-local switch that stops ops from recording backward closures, for
// inference and evaluation passes.
inline bool& grad_enabled() {
  thread_local bool enabled = true;
  return enabled;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

namespace detail {

template <typename S>
Tensor<S> make_output(Shape shape, std::vector<S> value, bool track) {
  Tensor<S> out(std::move(shape), std::move(value));
  if (track) out.set_requires_grad();
  return out;
}

template <typename S>
bool any_grad(std::initializer_list<const Tensor<S>*> ts) {
  if (!grad_enabled()) return false;
  for (const auto* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---- elementwise ----

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "add");
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  bool track = detail::any_grad<S>({&a, &b});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<S>::current().record([an, bn, on] {
      for (size_t i = 0; i < on->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += on->grad[i];
        if (bn->requires_grad) bn->grad[i] += on->grad[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "sub");
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  bool track = detail::any_grad<S>({&a, &b});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<S>::current().record([an, bn, on] {
      for (size_t i = 0; i < on->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += on->grad[i];
        if (bn->requires_grad) bn->grad[i] -= on->grad[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "mul");
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  bool track = detail::any_grad<S>({&a, &b});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<S>::current().record([an, bn, on] {
      for (size_t i = 0; i < on->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += on->grad[i] * bn->value[i];
        if (bn->requires_grad) bn->grad[i] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * c;
  bool track = detail::any_grad<S>({&a});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), on = out.node();
    Tape<S>::current().record([an, on, c] {
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i] * c;
    });
  }
  return out;
}

template <typename S>
Tensor<S> add_const(const Tensor<S>& a, S c) {
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + c;
  bool track = detail::any_grad<S>({&a});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), on = out.node();
    Tape<S>::current().record([an, on] {
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> relu(const Tensor<S>& a) {
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] > S(0) ? a.value()[i] : S(0);
  bool track = detail::any_grad<S>({&a});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), on = out.node();
    Tape<S>::current().record([an, on] {
      for (size_t i = 0; i < on->grad.size(); ++i)
        if (an->value[i] > S(0)) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

template <typename S>
Tensor<S> sigmoid(const Tensor<S>& a) {
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = S(1) / (S(1) + std::exp(-a.value()[i]));
  bool track = detail::any_grad<S>({&a});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), on = out.node();
    Tape<S>::current().record([an, on] {
      for (size_t i = 0; i < on->grad.size(); ++i) {
        S y = on->value[i];
        an->grad[i] += on->grad[i] * y * (S(1) - y);
      }
    });
  }
  return out;
}

// ln(sigmoid(x)), numerically stable form of -softplus(-x).
template <typename S>
Tensor<S> log_sigmoid(const Tensor<S>& a) {
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) {
    S x = a.value()[i];
    v[i] = x >= S(0) ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
  }
  bool track = detail::any_grad<S>({&a});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), on = out.node();
    Tape<S>::current().record([an, on] {
      for (size_t i = 0; i < on->grad.size(); ++i) {
        S x = an->value[i];
        S s = S(1) / (S(1) + std::exp(x));  // sigmoid(-x)
        an->grad[i] += on->grad[i] * s;
      }
    });
  }
  return out;
}

template <typename S>
Tensor<S> log_t(const Tensor<S>& a) {
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::log(a.value()[i]);
  bool track = detail::any_grad<S>({&a});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), on = out.node();
    Tape<S>::current().record([an, on] {
      for (size_t i = 0; i < on->grad.size(); ++i)
        an->grad[i] += on->grad[i] / an->value[i];
    });
  }
  return out;
}

// Gradient passes only strictly inside (lo, hi).
template <typename S>
Tensor<S> clamp(const Tensor<S>& a, S lo, S hi) {
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = std::min(hi, std::max(lo, a.value()[i]));
  bool track = detail::any_grad<S>({&a});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), on = out.node();
    Tape<S>::current().record([an, on, lo, hi] {
      for (size_t i = 0; i < on->grad.size(); ++i)
        if (an->value[i] > lo && an->value[i] < hi) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

// ---- reductions ----

template <typename S>
Tensor<S> sum(const Tensor<S>& a) {
  S total = std::accumulate(a.value().begin(), a.value().end(), S(0));
  bool track = detail::any_grad<S>({&a});
  auto out = detail::make_output<S>({1}, {total}, track);
  if (track) {
    auto an = a.node(), on = out.node();
    Tape<S>::current().record([an, on] {
      for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += on->grad[0];
    });
  }
  return out;
}

template <typename S>
Tensor<S> mean(const Tensor<S>& a) {
  return scale(sum(a), S(1) / static_cast<S>(a.numel()));
}

template <typename S>
Tensor<S> dot(const Tensor<S>& a, const Tensor<S>& b) {
  detail::check_same_shape(a, b, "dot");
  S total = S(0);
  for (size_t i = 0; i < a.value().size(); ++i) total += a.value()[i] * b.value()[i];
  bool track = detail::any_grad<S>({&a, &b});
  auto out = detail::make_output<S>({1}, {total}, track);
  if (track) {
    auto an = a.node(), bn = b.node(), on = out.node();
    Tape<S>::current().record([an, bn, on] {
      S g = on->grad[0];
      for (size_t i = 0; i < an->value.size(); ++i) {
        if (an->requires_grad) an->grad[i] += g * bn->value[i];
        if (bn->requires_grad) bn->grad[i] += g * an->value[i];
      }
    });
  }
  return out;
}

// out = a * s where s is a one-element tensor.
template <typename S>
Tensor<S> scale_by(const Tensor<S>& a, const Tensor<S>& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: scalar tensor expected, got " + shape_str(s.shape()));
  S c = s.at(0);
  std::vector<S> v(a.value().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * c;
  bool track = detail::any_grad<S>({&a, &s});
  auto out = detail::make_output<S>(a.shape(), std::move(v), track);
  if (track) {
    auto an = a.node(), sn = s.node(), on = out.node();
    Tape<S>::current().record([an, sn, on] {
      S c = sn->value[0];
      for (size_t i = 0; i < on->grad.size(); ++i) {
        if (an->requires_grad) an->grad[i] += on->grad[i] * c;
        if (sn->requires_grad) sn->grad[0] += on->grad[i] * an->value[i];
      }
    });
  }
  return out;
}

// ---- structure ----

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  bool track = detail::any_grad<S>({&a});
  auto out = detail::make_output<S>(std::move(shape), a.value(), track);
  if (track) {
    auto an = a.node(), on = out.node();
    Tape<S>::current().record([an, on] {
      for (size_t i = 0; i < on->grad.size(); ++i) an->grad[i] += on->grad[i];
    });
  }
  return out;
}

// Flat concatenation into a vector.
template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  long long total = 0;
  bool track = false;
  for (const auto& p : parts) {
    total += p.numel();
    track = track || p.requires_grad();
  }
  std::vector<S> v;
  v.reserve(static_cast<size_t>(total));
  for (const auto& p : parts) v.insert(v.end(), p.value().begin(), p.value().end());
  auto out = detail::make_output<S>({static_cast<int>(total)}, std::move(v), track);
  if (track) {
    std::vector<std::shared_ptr<TensorNode<S>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    auto on = out.node();
    Tape<S>::current().record([nodes, on] {
      size_t off = 0;
      for (auto& n : nodes) {
        if (n->requires_grad)
          for (size_t i = 0; i < n->value.size(); ++i) n->grad[i] += on->grad[off + i];
        off += n->value.size();
      }
    });
  }
  return out;
}

// Concatenate H x W x c_i maps along the channel axis.
template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& maps) {
  if (maps.empty()) throw ShapeError("concat_channels: no inputs");
  int h = maps[0].shape()[0], w = maps[0].shape()[1];
  int ctot = 0;
  bool track = false;
  for (const auto& m : maps) {
    if (m.shape().size() != 3 || m.shape()[0] != h || m.shape()[1] != w)
      throw ShapeError("concat_channels: incompatible map " + shape_str(m.shape()));
    ctot += m.shape()[2];
    track = track || m.requires_grad();
  }
  std::vector<S> v(static_cast<size_t>(h) * w * ctot);
  int coff = 0;
  for (const auto& m : maps) {
    int c = m.shape()[2];
    for (int p = 0; p < h * w; ++p)
      for (int j = 0; j < c; ++j)
        v[static_cast<size_t>(p) * ctot + coff + j] = m.value()[static_cast<size_t>(p) * c + j];
    coff += c;
  }
  auto out = detail::make_output<S>({h, w, ctot}, std::move(v), track);
  if (track) {
    std::vector<std::shared_ptr<TensorNode<S>>> nodes;
    std::vector<int> chans;
    for (const auto& m : maps) {
      nodes.push_back(m.node());
      chans.push_back(m.shape()[2]);
    }
    auto on = out.node();
    Tape<S>::current().record([nodes, chans, on, h, w, ctot] {
      int coff = 0;
      for (size_t k = 0; k < nodes.size(); ++k) {
        int c = chans[k];
        if (nodes[k]->requires_grad)
          for (int p = 0; p < h * w; ++p)
            for (int j = 0; j < c; ++j)
              nodes[k]->grad[static_cast<size_t>(p) * c + j] +=
                  on->grad[static_cast<size_t>(p) * ctot + coff + j];
        coff += c;
      }
    });
  }
  return out;
}

// ---- broadcasts (the two attention broadcasts only) ----

// F (HxWxC) * m (1x1xC), gate broadcast over all spatial positions.
template <typename S>
Tensor<S> broadcast_mul_channel(const Tensor<S>& f, const Tensor<S>& m) {
  if (f.shape().size() != 3)
    throw ShapeError("broadcast_mul_channel: map expected, got " + shape_str(f.shape()));
  int h = f.shape()[0], w = f.shape()[1], c = f.shape()[2];
  if (m.shape() != Shape{1, 1, c})
    throw ShapeError("broadcast_mul_channel: gate " + shape_str(m.shape()) +
                     " does not match channels of " + shape_str(f.shape()));
  std::vector<S> v(f.value().size());
  for (int p = 0; p < h * w; ++p)
    for (int j = 0; j < c; ++j)
      v[static_cast<size_t>(p) * c + j] = f.value()[static_cast<size_t>(p) * c + j] * m.value()[j];
  bool track = detail::any_grad<S>({&f, &m});
  auto out = detail::make_output<S>(f.shape(), std::move(v), track);
  if (track) {
    auto fn = f.node(), mn = m.node(), on = out.node();
    Tape<S>::current().record([fn, mn, on, h, w, c] {
      for (int p = 0; p < h * w; ++p)
        for (int j = 0; j < c; ++j) {
          size_t i = static_cast<size_t>(p) * c + j;
          if (fn->requires_grad) fn->grad[i] += on->grad[i] * mn->value[j];
          if (mn->requires_grad) mn->grad[j] += on->grad[i] * fn->value[i];
        }
    });
  }
  return out;
}

// F (HxWxC) * m (HxWx1), gate broadcast over channels.
template <typename S>
Tensor<S> broadcast_mul_spatial(const Tensor<S>& f, const Tensor<S>& m) {
  if (f.shape().size() != 3)
    throw ShapeError("broadcast_mul_spatial: map expected, got " + shape_str(f.shape()));
  int h = f.shape()[0], w = f.shape()[1], c = f.shape()[2];
  if (m.shape() != Shape{h, w, 1})
    throw ShapeError("broadcast_mul_spatial: gate " + shape_str(m.shape()) +
                     " does not match spatial extents of " + shape_str(f.shape()));
  std::vector<S> v(f.value().size());
  for (int p = 0; p < h * w; ++p)
    for (int j = 0; j < c; ++j)
      v[static_cast<size_t>(p) * c + j] = f.value()[static_cast<size_t>(p) * c + j] * m.value()[p];
  bool track = detail::any_grad<S>({&f, &m});
  auto out = detail::make_output<S>(f.shape(), std::move(v), track);
  if (track) {
    auto fn = f.node(), mn = m.node(), on = out.node();
    Tape<S>::current().record([fn, mn, on, h, w, c] {
      for (int p = 0; p < h * w; ++p)
        for (int j = 0; j < c; ++j) {
          size_t i = static_cast<size_t>(p) * c + j;
          if (fn->requires_grad) fn->grad[i] += on->grad[i] * mn->value[p];
          if (mn->requires_grad) mn->grad[p] += on->grad[i] * fn->value[i];
        }
    });
  }
  return out;
}

// ---- affine ----

// y = W x + b, W is (out, in) row-major.
template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
  if (w.shape().size() != 2)
    throw ShapeError("linear: weight must be 2-d, got " + shape_str(w.shape()));
  int out_dim = w.shape()[0], in_dim = w.shape()[1];
  if (x.numel() != in_dim)
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not chain with weight " +
                     shape_str(w.shape()));
  if (b.numel() != out_dim)
    throw ShapeError("linear: bias " + shape_str(b.shape()) + " does not match weight " +
                     shape_str(w.shape()));
  std::vector<S> v(static_cast<size_t>(out_dim));
  for (int o = 0; o < out_dim; ++o) {
    S acc = b.value()[o];
    const S* wr = w.value().data() + static_cast<size_t>(o) * in_dim;
    for (int i = 0; i < in_dim; ++i) acc += wr[i] * x.value()[i];
    v[o] = acc;
  }
  bool track = detail::any_grad<S>({&x, &w, &b});
  auto out = detail::make_output<S>({out_dim}, std::move(v), track);
  if (track) {
    auto xn = x.node(), wn = w.node(), bn = b.node(), on = out.node();
    Tape<S>::current().record([xn, wn, bn, on, out_dim, in_dim] {
      for (int o = 0; o < out_dim; ++o) {
        S g = on->grad[o];
        if (g == S(0)) continue;
        if (bn->requires_grad) bn->grad[o] += g;
        const S* wr = wn->value.data() + static_cast<size_t>(o) * in_dim;
        S* wg = wn->requires_grad ? wn->grad.data() + static_cast<size_t>(o) * in_dim : nullptr;
        for (int i = 0; i < in_dim; ++i) {
          if (xn->requires_grad) xn->grad[i] += g * wr[i];
          if (wg) wg[i] += g * xn->value[i];
        }
      }
    });
  }
  return out;
}

enum class Activation { None, Relu, Sigmoid };

template <typename S>
struct MlpLayer {
  Tensor<S> w;  // (out, in)
  Tensor<S> b;  // (out)
};

template <typename S>
Tensor<S> mlp_forward(const Tensor<S>& x, const std::vector<MlpLayer<S>>& layers,
                      Activation hidden, Activation output) {
  if (layers.empty()) throw ShapeError("mlp_forward: no layers");
  Tensor<S> h = x;
  for (size_t i = 0; i < layers.size(); ++i) {
    h = linear(h, layers[i].w, layers[i].b);
    Activation act = (i + 1 == layers.size()) ? output : hidden;
    if (act == Activation::Relu) h = relu(h);
    else if (act == Activation::Sigmoid) h = sigmoid(h);
  }
  return h;
}

// ---- convolution & pooling ----

// Cross-correlation. input HxWxCin, kernel kh x kw x Cin x Cout, bias Cout.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& bias,
                 int stride, int padding) {
  if (input.shape().size() != 3)
    throw ShapeError("conv2d: input must be HxWxC, got " + shape_str(input.shape()));
  if (kernel.shape().size() != 4)
    throw ShapeError("conv2d: kernel must be kh x kw x Cin x Cout, got " + shape_str(kernel.shape()));
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: bad stride/padding");
  int h = input.shape()[0], w = input.shape()[1], cin = input.shape()[2];
  int kh = kernel.shape()[0], kw = kernel.shape()[1];
  int kcin = kernel.shape()[2], cout = kernel.shape()[3];
  if (cin != kcin)
    throw ShapeError("conv2d: input channels " + std::to_string(cin) +
                     " do not match kernel input channels " + std::to_string(kcin));
  if (bias.numel() != cout)
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match Cout " +
                     std::to_string(cout));
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  int oh = (h + 2 * padding - kh) / stride + 1;
  int ow = (w + 2 * padding - kw) / stride + 1;

  std::vector<S> v(static_cast<size_t>(oh) * ow * cout);
  const S* in = input.value().data();
  const S* ker = kernel.value().data();
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      S* op = v.data() + (static_cast<size_t>(y) * ow + x) * cout;
      for (int oc = 0; oc < cout; ++oc) op[oc] = bias.value()[oc];
      for (int ky = 0; ky < kh; ++ky) {
        int iy = y * stride - padding + ky;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < kw; ++kx) {
          int ix = x * stride - padding + kx;
          if (ix < 0 || ix >= w) continue;
          const S* ip = in + (static_cast<size_t>(iy) * w + ix) * cin;
          const S* kp = ker + ((static_cast<size_t>(ky) * kw + kx) * cin) * cout;
          for (int ic = 0; ic < cin; ++ic) {
            S xv = ip[ic];
            const S* kc = kp + static_cast<size_t>(ic) * cout;
            for (int oc = 0; oc < cout; ++oc) op[oc] += xv * kc[oc];
          }
        }
      }
    }

  bool track = detail::any_grad<S>({&input, &kernel, &bias});
  auto out = detail::make_output<S>({oh, ow, cout}, std::move(v), track);
  if (track) {
    auto inn = input.node(), kn = kernel.node(), bn = bias.node(), on = out.node();
    Tape<S>::current().record([inn, kn, bn, on, h, w, cin, kh, kw, cout, oh, ow, stride, padding] {
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          const S* og = on->grad.data() + (static_cast<size_t>(y) * ow + x) * cout;
          if (bn->requires_grad)
            for (int oc = 0; oc < cout; ++oc) bn->grad[oc] += og[oc];
          for (int ky = 0; ky < kh; ++ky) {
            int iy = y * stride - padding + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < kw; ++kx) {
              int ix = x * stride - padding + kx;
              if (ix < 0 || ix >= w) continue;
              size_t ibase = (static_cast<size_t>(iy) * w + ix) * cin;
              size_t kbase = (static_cast<size_t>(ky) * kw + kx) * cin * cout;
              for (int ic = 0; ic < cin; ++ic) {
                const S* kc = kn->value.data() + kbase + static_cast<size_t>(ic) * cout;
                S xv = inn->value[ibase + ic];
                S gin = S(0);
                if (kn->requires_grad) {
                  S* kg = kn->grad.data() + kbase + static_cast<size_t>(ic) * cout;
                  for (int oc = 0; oc < cout; ++oc) {
                    kg[oc] += og[oc] * xv;
                    gin += og[oc] * kc[oc];
                  }
                } else {
                  for (int oc = 0; oc < cout; ++oc) gin += og[oc] * kc[oc];
                }
                if (inn->requires_grad) inn->grad[ibase + ic] += gin;
              }
            }
          }
        }
    });
  }
  return out;
}

template <typename S>
Tensor<S> max_pool2d(const Tensor<S>& input, int win, int stride) {
  if (input.shape().size() != 3)
    throw ShapeError("max_pool2d: input must be HxWxC, got " + shape_str(input.shape()));
  int h = input.shape()[0], w = input.shape()[1], c = input.shape()[2];
  int oh = (h - win) / stride + 1;
  int ow = (w - win) / stride + 1;
  if (oh < 1 || ow < 1) throw ShapeError("max_pool2d: window larger than input");
  std::vector<S> v(static_cast<size_t>(oh) * ow * c);
  std::vector<int> arg(v.size());
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x)
      for (int j = 0; j < c; ++j) {
        S best = -std::numeric_limits<S>::infinity();
        int besti = -1;
        for (int dy = 0; dy < win; ++dy)
          for (int dx = 0; dx < win; ++dx) {
            int iy = y * stride + dy, ix = x * stride + dx;
            size_t i = (static_cast<size_t>(iy) * w + ix) * c + j;
            if (input.value()[i] > best) {
              best = input.value()[i];
              besti = static_cast<int>(i);
            }
          }
        size_t o = (static_cast<size_t>(y) * ow + x) * c + j;
        v[o] = best;
        arg[o] = besti;
      }
  bool track = detail::any_grad<S>({&input});
  auto out = detail::make_output<S>({oh, ow, c}, std::move(v), track);
  if (track) {
    auto inn = input.node(), on = out.node();
    Tape<S>::current().record([inn, on, arg] {
      for (size_t i = 0; i < on->grad.size(); ++i) inn->grad[arg[i]] += on->grad[i];
    });
  }
  return out;
}

enum class PoolMode { Max, Avg };

// Squeeze spatial dimensions: HxWxC -> 1x1xC.
template <typename S>
Tensor<S> spatial_pool(const Tensor<S>& input, PoolMode mode) {
  if (input.shape().size() != 3)
    throw ShapeError("spatial_pool: input must be HxWxC, got " + shape_str(input.shape()));
  int h = input.shape()[0], w = input.shape()[1], c = input.shape()[2];
  int hw = h * w;
  std::vector<S> v(static_cast<size_t>(c));
  std::vector<int> arg(mode == PoolMode::Max ? c : 0);
  for (int j = 0; j < c; ++j) {
    if (mode == PoolMode::Max) {
      S best = input.value()[j];
      int bi = j;
      for (int p = 1; p < hw; ++p) {
        size_t i = static_cast<size_t>(p) * c + j;
        if (input.value()[i] > best) {
          best = input.value()[i];
          bi = static_cast<int>(i);
        }
      }
      v[j] = best;
      arg[j] = bi;
    } else {
      S acc = S(0);
      for (int p = 0; p < hw; ++p) acc += input.value()[static_cast<size_t>(p) * c + j];
      v[j] = acc / static_cast<S>(hw);
    }
  }
  bool track = detail::any_grad<S>({&input});
  auto out = detail::make_output<S>({1, 1, c}, std::move(v), track);
  if (track) {
    auto inn = input.node(), on = out.node();
    if (mode == PoolMode::Max) {
      Tape<S>::current().record([inn, on, arg] {
        for (size_t j = 0; j < on->grad.size(); ++j) inn->grad[arg[j]] += on->grad[j];
      });
    } else {
      Tape<S>::current().record([inn, on, c, hw] {
        for (int j = 0; j < c; ++j) {
          S g = on->grad[j] / static_cast<S>(hw);
          for (int p = 0; p < hw; ++p) inn->grad[static_cast<size_t>(p) * c + j] += g;
        }
      });
    }
  }
  return out;
}

// Reduce across channels: HxWxC -> HxWx1.
template <typename S>
Tensor<S> channel_pool(const Tensor<S>& input, PoolMode mode) {
  if (input.shape().size() != 3)
    throw ShapeError("channel_pool: input must be HxWxC, got " + shape_str(input.shape()));
  int h = input.shape()[0], w = input.shape()[1], c = input.shape()[2];
  int hw = h * w;
  std::vector<S> v(static_cast<size_t>(hw));
  std::vector<int> arg(mode == PoolMode::Max ? hw : 0);
  for (int p = 0; p < hw; ++p) {
    const S* row = input.value().data() + static_cast<size_t>(p) * c;
    if (mode == PoolMode::Max) {
      int bi = 0;
      for (int j = 1; j < c; ++j)
        if (row[j] > row[bi]) bi = j;
      v[p] = row[bi];
      arg[p] = p * c + bi;
    } else {
      S acc = S(0);
      for (int j = 0; j < c; ++j) acc += row[j];
      v[p] = acc / static_cast<S>(c);
    }
  }
  bool track = detail::any_grad<S>({&input});
  auto out = detail::make_output<S>({h, w, 1}, std::move(v), track);
  if (track) {
    auto inn = input.node(), on = out.node();
    if (mode == PoolMode::Max) {
      Tape<S>::current().record([inn, on, arg] {
        for (size_t p = 0; p < on->grad.size(); ++p) inn->grad[arg[p]] += on->grad[p];
      });
    } else {
      Tape<S>::current().record([inn, on, c, hw] {
        for (int p = 0; p < hw; ++p) {
          S g = on->grad[p] / static_cast<S>(c);
          for (int j = 0; j < c; ++j) inn->grad[static_cast<size_t>(p) * c + j] += g;
        }
      });
    }
  }
  return out;
}

// Half-pixel-center bilinear interpolation on a single-channel map.
template <typename S>
Tensor<S> bilinear_resize(const Tensor<S>& input, int out_h, int out_w) {
  if (input.shape().size() != 3 || input.shape()[2] != 1)
    throw ShapeError("bilinear_resize: input must be HxWx1, got " + shape_str(input.shape()));
  if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: bad target size");
  int h = input.shape()[0], w = input.shape()[1];

  struct Taps {
    int i0, i1;
    S w0, w1;
  };
  auto axis_taps = [](int in_n, int out_n) {
    std::vector<Taps> taps(static_cast<size_t>(out_n));
    double s = static_cast<double>(in_n) / out_n;
    for (int i = 0; i < out_n; ++i) {
      double src = (i + 0.5) * s - 0.5;
      src = std::max(0.0, std::min(static_cast<double>(in_n - 1), src));
      int i0 = static_cast<int>(std::floor(src));
      int i1 = std::min(i0 + 1, in_n - 1);
      double frac = src - i0;
      taps[i] = {i0, i1, static_cast<S>(1.0 - frac), static_cast<S>(frac)};
    }
    return taps;
  };
  auto ty = axis_taps(h, out_h);
  auto tx = axis_taps(w, out_w);

  std::vector<S> v(static_cast<size_t>(out_h) * out_w);
  for (int y = 0; y < out_h; ++y)
    for (int x = 0; x < out_w; ++x) {
      const auto& a = ty[y];
      const auto& b = tx[x];
      v[static_cast<size_t>(y) * out_w + x] =
          a.w0 * (b.w0 * input.value()[static_cast<size_t>(a.i0) * w + b.i0] +
                  b.w1 * input.value()[static_cast<size_t>(a.i0) * w + b.i1]) +
          a.w1 * (b.w0 * input.value()[static_cast<size_t>(a.i1) * w + b.i0] +
                  b.w1 * input.value()[static_cast<size_t>(a.i1) * w + b.i1]);
    }
  bool track = detail::any_grad<S>({&input});
  auto out = detail::make_output<S>({out_h, out_w, 1}, std::move(v), track);
  if (track) {
    auto inn = input.node(), on = out.node();
    Tape<S>::current().record([inn, on, ty, tx, w, out_h, out_w] {
      for (int y = 0; y < out_h; ++y)
        for (int x = 0; x < out_w; ++x) {
          S g = on->grad[static_cast<size_t>(y) * out_w + x];
          const auto& a = ty[y];
          const auto& b = tx[x];
          inn->grad[static_cast<size_t>(a.i0) * w + b.i0] += g * a.w0 * b.w0;
          inn->grad[static_cast<size_t>(a.i0) * w + b.i1] += g * a.w0 * b.w1;
          inn->grad[static_cast<size_t>(a.i1) * w + b.i0] += g * a.w1 * b.w0;
          inn->grad[static_cast<size_t>(a.i1) * w + b.i1] += g * a.w1 * b.w1;
        }
    });
  }
  return out;
}

// ---- table lookups ----

// Mean of selected rows of an (n, d) table; gradient scatters back to rows.
template <typename S>
Tensor<S> rows_mean(const Tensor<S>& table, const std::vector<int>& ids) {
  if (table.shape().size() != 2)
    throw ShapeError("rows_mean: table must be 2-d, got " + shape_str(table.shape()));
  if (ids.empty()) throw ShapeError("rows_mean: no row ids");
  int n = table.shape()[0], d = table.shape()[1];
  for (int id : ids)
    if (id < 0 || id >= n)
      throw ShapeError("rows_mean: row id " + std::to_string(id) + " out of range [0," +
                       std::to_string(n) + ")");
  std::vector<S> v(static_cast<size_t>(d), S(0));
  for (int id : ids)
    for (int j = 0; j < d; ++j) v[j] += table.value()[static_cast<size_t>(id) * d + j];
  S inv = S(1) / static_cast<S>(ids.size());
  for (auto& x : v) x *= inv;
  bool track = detail::any_grad<S>({&table});
  auto out = detail::make_output<S>({d}, std::move(v), track);
  if (track) {
    auto tn = table.node(), on = out.node();
    Tape<S>::current().record([tn, on, ids, d, inv] {
      for (int id : ids)
        for (int j = 0; j < d; ++j) tn->grad[static_cast<size_t>(id) * d + j] += on->grad[j] * inv;
    });
  }
  return out;
}

template <typename S>
Tensor<S> take_row(const Tensor<S>& table, int id) {
  return rows_mean(table, std::vector<int>{id});
}

// One element by flat index, as a one-element tensor.
template <typename S>
Tensor<S> select(const Tensor<S>& t, long long index) {
  if (index < 0 || index >= t.numel())
    throw ShapeError("select: index " + std::to_string(index) + " out of range for " +
                     shape_str(t.shape()));
  bool track = detail::any_grad<S>({&t});
  auto out = detail::make_output<S>({1}, {t.value()[static_cast<size_t>(index)]}, track);
  if (track) {
    auto tn = t.node(), on = out.node();
    Tape<S>::current().record([tn, on, index] { tn->grad[static_cast<size_t>(index)] += on->grad[0]; });
  }
  return out;
}

// ---- backward driver ----

template <typename S>
void backward(const Tensor<S>& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (loss.requires_grad()) loss.node()->grad[0] += S(1);
  Tape<S>::current().run_backward();
  Tape<S>::current().clear();
}

}  // namespace cscnn
