#pragma once

// Scalar reverse-mode autodiff on an append-only tape.
//
// Each node stores its value and a list of (parent, partial) edges. Nodes
// are created in evaluation order, so one reverse sweep from the root
// accumulates exact adjoints. Constants never create nodes. A node may carry
// a hook that receives its adjoint during the sweep; networks use this to
// push gradients straight into their parameter buffers.

#include <cmath>
#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace jumpsde::ad {

using HookFn = void (*)(void* ctx, double arg, double adjoint);

class Tape {
 public:
  struct Edge {
    std::uint32_t parent;
    double partial;
  };

  std::uint32_t size() const { return static_cast<std::uint32_t>(values_.size()); }
  double value(std::uint32_t i) const { return values_[i]; }
  double adjoint(std::uint32_t i) const { return adjoints_[i]; }

  void clear() {
    values_.clear();
    first_.clear();
    edges_.clear();
    hooks_.clear();
    hook_of_.clear();
    adjoints_.clear();
  }

  std::uint32_t leaf(double v) { return push(v); }

  std::uint32_t unary(double v, std::uint32_t p, double dp) {
    const auto i = push(v);
    edges_.push_back({p, dp});
    return i;
  }

  std::uint32_t binary(double v, std::uint32_t p, double dp, std::uint32_t q, double dq) {
    const auto i = push(v);
    edges_.push_back({p, dp});
    edges_.push_back({q, dq});
    return i;
  }

  std::uint32_t nary(double v, std::span<const std::uint32_t> parents, std::span<const double> partials) {
    const auto i = push(v);
    for (std::size_t k = 0; k < parents.size(); ++k) edges_.push_back({parents[k], partials[k]});
    return i;
  }

  // A node with no parents whose adjoint is handed to fn(ctx, arg, adjoint).
  std::uint32_t hook(double v, HookFn fn, void* ctx, double arg) {
    const auto i = push(v);
    hook_of_.resize(values_.size(), -1);
    hook_of_[i] = static_cast<std::int32_t>(hooks_.size());
    hooks_.push_back({fn, ctx, arg});
    return i;
  }

  // Reverse sweep seeded with d(root)/d(root) = 1.
  void backward(std::uint32_t root) {
    adjoints_.assign(values_.size(), 0.0);
    adjoints_[root] = 1.0;
    hook_of_.resize(values_.size(), -1);
    first_.push_back(static_cast<std::uint32_t>(edges_.size()));
    for (std::uint32_t i = root + 1; i-- > 0;) {
      const double a = adjoints_[i];
      if (a == 0.0) continue;
      for (std::uint32_t e = first_[i]; e < first_[i + 1]; ++e) adjoints_[edges_[e].parent] += a * edges_[e].partial;
      if (hook_of_[i] >= 0) {
        const auto& h = hooks_[hook_of_[i]];
        h.fn(h.ctx, h.arg, a);
      }
    }
    first_.pop_back();
  }

 private:
  struct Hook {
    HookFn fn;
    void* ctx;
    double arg;
  };

  std::uint32_t push(double v) {
    const auto i = static_cast<std::uint32_t>(values_.size());
    values_.push_back(v);
    first_.push_back(static_cast<std::uint32_t>(edges_.size()));
    return i;
  }

  std::vector<double> values_;
  std::vector<std::uint32_t> first_;  // first edge of each node
  std::vector<Edge> edges_;
  std::vector<Hook> hooks_;
  std::vector<std::int32_t> hook_of_;
  std::vector<double> adjoints_;
};

// A tracked scalar: a tape node, or a plain constant when tape == nullptr.
struct Var {
  Tape* tape = nullptr;
  std::uint32_t index = 0;
  double value = 0.0;

  Var() = default;
  Var(double v) : value(v) {}  // NOLINT: implicit constants keep formulas readable
  Var(Tape* t, std::uint32_t i) : tape(t), index(i), value(t->value(i)) {}

  static Var leaf(Tape& t, double v) { return {&t, t.leaf(v)}; }

  bool tracked() const { return tape != nullptr; }
  double adjoint() const { return tape ? tape->adjoint(index) : 0.0; }
  void backward() const {
    if (tape) tape->backward(index);
  }
};

namespace detail {
inline Tape* tape_of(const Var& a, const Var& b) { return a.tape ? a.tape : b.tape; }

inline Var make1(const Var& a, double v, double da) {
  if (!a.tape) return Var(v);
  return {a.tape, a.tape->unary(v, a.index, da)};
}

inline Var make2(const Var& a, const Var& b, double v, double da, double db) {
  if (!a.tape && !b.tape) return Var(v);
  if (!b.tape) return {a.tape, a.tape->unary(v, a.index, da)};
  if (!a.tape) return {b.tape, b.tape->unary(v, b.index, db)};
  return {a.tape, a.tape->binary(v, a.index, da, b.index, db)};
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::make2(a, b, a.value + b.value, 1.0, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::make2(a, b, a.value - b.value, 1.0, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return detail::make2(a, b, a.value * b.value, b.value, a.value); }
inline Var operator/(const Var& a, const Var& b) {
  const double q = a.value / b.value;
  return detail::make2(a, b, q, 1.0 / b.value, -q / b.value);
}
inline Var operator-(const Var& a) { return detail::make1(a, -a.value, -1.0); }

inline Var operator+(const Var& a, double b) { return detail::make1(a, a.value + b, 1.0); }
inline Var operator+(double a, const Var& b) { return detail::make1(b, a + b.value, 1.0); }
inline Var operator-(const Var& a, double b) { return detail::make1(a, a.value - b, 1.0); }
inline Var operator-(double a, const Var& b) { return detail::make1(b, a - b.value, -1.0); }
inline Var operator*(const Var& a, double b) { return detail::make1(a, a.value * b, b); }
inline Var operator*(double a, const Var& b) { return detail::make1(b, a * b.value, a); }
inline Var operator/(const Var& a, double b) { return detail::make1(a, a.value / b, 1.0 / b); }
inline Var operator/(double a, const Var& b) {
  const double q = a / b.value;
  return detail::make1(b, q, -q / b.value);
}

inline bool operator<(const Var& a, const Var& b) { return a.value < b.value; }
inline bool operator>(const Var& a, const Var& b) { return a.value > b.value; }
inline bool operator<=(const Var& a, const Var& b) { return a.value <= b.value; }
inline bool operator>=(const Var& a, const Var& b) { return a.value >= b.value; }
inline bool operator==(const Var& a, const Var& b) { return a.value == b.value; }
inline bool operator!=(const Var& a, const Var& b) { return a.value != b.value; }

inline Var exp(const Var& a) {
  const double e = std::exp(a.value);
  return detail::make1(a, e, e);
}
inline Var log(const Var& a) { return detail::make1(a, std::log(a.value), 1.0 / a.value); }
inline Var sqrt(const Var& a) {
  const double s = std::sqrt(a.value);
  return detail::make1(a, s, s > 0.0 ? 0.5 / s : 0.0);
}
// Subgradient 0 at 0.
inline Var abs(const Var& a) {
  return detail::make1(a, std::fabs(a.value), a.value > 0.0 ? 1.0 : (a.value < 0.0 ? -1.0 : 0.0));
}
inline Var square(const Var& a) { return detail::make1(a, a.value * a.value, 2.0 * a.value); }

// Custom node: value v with the given parents and partials. Untracked
// parents are skipped.
inline Var custom(Tape& tape, double v, std::span<const Var> parents, std::span<const double> partials) {
  thread_local std::vector<std::uint32_t> idx;
  thread_local std::vector<double> part;
  idx.clear();
  part.clear();
  for (std::size_t k = 0; k < parents.size(); ++k) {
    if (!parents[k].tape) continue;
    idx.push_back(parents[k].index);
    part.push_back(partials[k]);
  }
  return {&tape, tape.nary(v, idx, part)};
}

// Complex value carried as two tracked reals. Operations create holomorphic
// nodes: for w = F(z) with F'(z) = p + iq, the Cauchy-Riemann equations give
// dRe(w)/dRe(z) = p, dRe(w)/dIm(z) = -q, dIm(w)/dRe(z) = q, dIm(w)/dIm(z) = p.
struct TrackedComplex {
  Var re;
  Var im;

  TrackedComplex() = default;
  TrackedComplex(Var r, Var i) : re(r), im(i) {}
  TrackedComplex(std::complex<double> z) : re(z.real()), im(z.imag()) {}  // NOLINT

  std::complex<double> value() const { return {re.value, im.value}; }
};

namespace detail {
// w = F(z) for one operand with derivative dF.
inline TrackedComplex holo1(const TrackedComplex& z, std::complex<double> w, std::complex<double> dF) {
  Tape* t = tape_of(z.re, z.im);
  if (!t) return TrackedComplex(w);
  const Var ps[2] = {z.re, z.im};
  const double dre[2] = {dF.real(), -dF.imag()};
  const double dim[2] = {dF.imag(), dF.real()};
  return {custom(*t, w.real(), ps, dre), custom(*t, w.imag(), ps, dim)};
}

// w = F(a, b) with partial derivatives da, db.
inline TrackedComplex holo2(const TrackedComplex& a, const TrackedComplex& b, std::complex<double> w,
                            std::complex<double> da, std::complex<double> db) {
  Tape* t = tape_of(a.re, a.im);
  if (!t) t = tape_of(b.re, b.im);
  if (!t) return TrackedComplex(w);
  const Var ps[4] = {a.re, a.im, b.re, b.im};
  const double dre[4] = {da.real(), -da.imag(), db.real(), -db.imag()};
  const double dim[4] = {da.imag(), da.real(), db.imag(), db.real()};
  return {custom(*t, w.real(), ps, dre), custom(*t, w.imag(), ps, dim)};
}
}  // namespace detail

inline TrackedComplex operator+(const TrackedComplex& a, const TrackedComplex& b) { return {a.re + b.re, a.im + b.im}; }
inline TrackedComplex operator-(const TrackedComplex& a, const TrackedComplex& b) { return {a.re - b.re, a.im - b.im}; }
inline TrackedComplex operator*(const TrackedComplex& a, const TrackedComplex& b) {
  return detail::holo2(a, b, a.value() * b.value(), b.value(), a.value());
}
inline TrackedComplex operator/(const TrackedComplex& a, const TrackedComplex& b) {
  const std::complex<double> q = a.value() / b.value();
  return detail::holo2(a, b, q, 1.0 / b.value(), -q / b.value());
}
inline TrackedComplex exp(const TrackedComplex& z) {
  const std::complex<double> e = std::exp(z.value());
  return detail::holo1(z, e, e);
}
// Principal branch; the cut is the non-positive real axis.
inline TrackedComplex sqrt(const TrackedComplex& z) {
  const std::complex<double> v = z.value();
  if (v.imag() == 0.0 && v.real() <= 0.0) throw std::domain_error("complex sqrt on the branch cut");
  const std::complex<double> s = std::sqrt(v);
  return detail::holo1(z, s, 0.5 / s);
}

}  // namespace jumpsde::ad
