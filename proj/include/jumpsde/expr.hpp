#pragma once

// Closed-form coefficient expressions in one variable `x`.
//
// Grammar (precedence high to low): `^` (constant integer exponent), unary
// `-`/`+`, `*` `/`, `+` `-`. Binary operators are left-associative. Function
// calls: sin cos exp tanh abs (and sign, which only appears in derivatives of
// abs but is accepted so that printed derivatives parse back).

#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>

namespace jumpsde::expr {

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at offset " + std::to_string(offset)), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

enum class Op { Const, Var, Neg, Sin, Cos, Exp, Tanh, Abs, Sign, Add, Sub, Mul, Div, Pow };

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct Node {
  Op op = Op::Const;
  double value = 0.0;  // Const
  int exponent = 0;    // Pow
  NodePtr lhs;         // unary operand / left operand / base
  NodePtr rhs;
};

namespace detail {

inline NodePtr make(Op op, NodePtr lhs = nullptr, NodePtr rhs = nullptr) {
  auto n = std::make_shared<Node>();
  n->op = op;
  n->lhs = std::move(lhs);
  n->rhs = std::move(rhs);
  return n;
}

inline NodePtr constant(double v) {
  auto n = std::make_shared<Node>();
  n->op = Op::Const;
  n->value = v;
  return n;
}

inline NodePtr variable() { return make(Op::Var); }

inline NodePtr power(NodePtr base, int exponent) {
  auto n = std::make_shared<Node>();
  n->op = Op::Pow;
  n->lhs = std::move(base);
  n->exponent = exponent;
  return n;
}

inline bool is_const(const NodePtr& n, double v) { return n->op == Op::Const && n->value == v; }

// Constructors with trivial constant folding. Only used when building
// derivatives; parsed trees are kept exactly as written.
inline NodePtr add(NodePtr a, NodePtr b) {
  if (is_const(a, 0.0)) return b;
  if (is_const(b, 0.0)) return a;
  if (a->op == Op::Const && b->op == Op::Const) return constant(a->value + b->value);
  return make(Op::Add, std::move(a), std::move(b));
}

inline NodePtr sub(NodePtr a, NodePtr b) {
  if (is_const(b, 0.0)) return a;
  if (a->op == Op::Const && b->op == Op::Const) return constant(a->value - b->value);
  if (is_const(a, 0.0)) return make(Op::Neg, std::move(b));
  return make(Op::Sub, std::move(a), std::move(b));
}

inline NodePtr mul(NodePtr a, NodePtr b) {
  if (is_const(a, 0.0) || is_const(b, 0.0)) return constant(0.0);
  if (is_const(a, 1.0)) return b;
  if (is_const(b, 1.0)) return a;
  if (a->op == Op::Const && b->op == Op::Const) return constant(a->value * b->value);
  return make(Op::Mul, std::move(a), std::move(b));
}

inline NodePtr div(NodePtr a, NodePtr b) {
  if (is_const(a, 0.0)) return constant(0.0);
  if (is_const(b, 1.0)) return a;
  return make(Op::Div, std::move(a), std::move(b));
}

inline NodePtr neg(NodePtr a) {
  if (a->op == Op::Const) return constant(-a->value);
  return make(Op::Neg, std::move(a));
}

inline double eval(const Node& n, double x) {
  switch (n.op) {
    case Op::Const: return n.value;
    case Op::Var: return x;
    case Op::Neg: return -eval(*n.lhs, x);
    case Op::Sin: return std::sin(eval(*n.lhs, x));
    case Op::Cos: return std::cos(eval(*n.lhs, x));
    case Op::Exp: return std::exp(eval(*n.lhs, x));
    case Op::Tanh: return std::tanh(eval(*n.lhs, x));
    case Op::Abs: return std::fabs(eval(*n.lhs, x));
    case Op::Sign: {
      const double v = eval(*n.lhs, x);
      return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
    }
    case Op::Add: return eval(*n.lhs, x) + eval(*n.rhs, x);
    case Op::Sub: return eval(*n.lhs, x) - eval(*n.rhs, x);
    case Op::Mul: return eval(*n.lhs, x) * eval(*n.rhs, x);
    case Op::Div: return eval(*n.lhs, x) / eval(*n.rhs, x);
    case Op::Pow: return std::pow(eval(*n.lhs, x), n.exponent);
  }
  return std::numeric_limits<double>::quiet_NaN();
}

inline bool depends_on_x(const Node& n) {
  if (n.op == Op::Var) return true;
  if (n.lhs && depends_on_x(*n.lhs)) return true;
  if (n.rhs && depends_on_x(*n.rhs)) return true;
  return false;
}

inline NodePtr derive(const NodePtr& n) {
  switch (n->op) {
    case Op::Const: return constant(0.0);
    case Op::Var: return constant(1.0);
    case Op::Neg: return neg(derive(n->lhs));
    case Op::Sin: return mul(make(Op::Cos, n->lhs), derive(n->lhs));
    case Op::Cos: return neg(mul(make(Op::Sin, n->lhs), derive(n->lhs)));
    case Op::Exp: return mul(n, derive(n->lhs));
    case Op::Tanh: return mul(sub(constant(1.0), power(n, 2)), derive(n->lhs));
    // Subgradient 0 at the origin.
    case Op::Abs: return mul(make(Op::Sign, n->lhs), derive(n->lhs));
    case Op::Sign: return constant(0.0);
    case Op::Add: return add(derive(n->lhs), derive(n->rhs));
    case Op::Sub: return sub(derive(n->lhs), derive(n->rhs));
    case Op::Mul:
      return add(mul(derive(n->lhs), n->rhs), mul(n->lhs, derive(n->rhs)));
    case Op::Div:
      return div(sub(mul(derive(n->lhs), n->rhs), mul(n->lhs, derive(n->rhs))),
                 power(n->rhs, 2));
    case Op::Pow: {
      if (n->exponent == 0) return constant(0.0);
      if (n->exponent == 1) return derive(n->lhs);
      NodePtr reduced = n->exponent == 2 ? n->lhs : power(n->lhs, n->exponent - 1);
      return mul(mul(constant(static_cast<double>(n->exponent)), reduced), derive(n->lhs));
    }
  }
  return constant(0.0);
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* function_name(Op op) {
  switch (op) {
    case Op::Sin: return "sin";
    case Op::Cos: return "cos";
    case Op::Exp: return "exp";
    case Op::Tanh: return "tanh";
    case Op::Abs: return "abs";
    case Op::Sign: return "sign";
    default: return nullptr;
  }
}

// Fully parenthesised so that parse(print(e)) reproduces the tree shape.
inline void print(const Node& n, std::string& out) {
  switch (n.op) {
    case Op::Const:
      out += '(';
      out += format_double(n.value);
      out += ')';
      return;
    case Op::Var: out += 'x'; return;
    case Op::Neg:
      out += "(-";
      print(*n.lhs, out);
      out += ')';
      return;
    case Op::Add:
    case Op::Sub:
    case Op::Mul:
    case Op::Div: {
      const char sym = n.op == Op::Add ? '+' : n.op == Op::Sub ? '-' : n.op == Op::Mul ? '*' : '/';
      out += '(';
      print(*n.lhs, out);
      out += sym;
      print(*n.rhs, out);
      out += ')';
      return;
    }
    case Op::Pow:
      out += '(';
      print(*n.lhs, out);
      out += "^(";
      out += std::to_string(n.exponent);
      out += "))";
      return;
    default:
      out += function_name(n.op);
      out += '(';
      print(*n.lhs, out);
      out += ')';
      return;
  }
}

class Parser {
 public:
  explicit Parser(std::string_view src) : src_(src) {}

  NodePtr parse() {
    NodePtr n = parse_sum();
    skip_ws();
    if (pos_ != src_.size()) throw ParseError("unexpected character '" + std::string(1, src_[pos_]) + "'", pos_);
    return n;
  }

 private:
  std::string_view src_;
  std::size_t pos_ = 0;

  void skip_ws() {
    while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\n' || src_[pos_] == '\r'))
      ++pos_;
  }

  bool accept(char c) {
    skip_ws();
    if (pos_ < src_.size() && src_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect(char c) {
    if (!accept(c)) {
      skip_ws();
      if (pos_ >= src_.size()) throw ParseError(std::string("expected '") + c + "' but input ended", pos_);
      throw ParseError(std::string("expected '") + c + "'", pos_);
    }
  }

  NodePtr parse_sum() {
    NodePtr lhs = parse_product();
    for (;;) {
      if (accept('+')) lhs = make(Op::Add, lhs, parse_product());
      else if (accept('-')) lhs = make(Op::Sub, lhs, parse_product());
      else return lhs;
    }
  }

  NodePtr parse_product() {
    NodePtr lhs = parse_unary();
    for (;;) {
      if (accept('*')) lhs = make(Op::Mul, lhs, parse_unary());
      else if (accept('/')) lhs = make(Op::Div, lhs, parse_unary());
      else return lhs;
    }
  }

  NodePtr parse_unary() {
    if (accept('-')) return make(Op::Neg, parse_unary());
    if (accept('+')) return parse_unary();
    return parse_power();
  }

  NodePtr parse_power() {
    NodePtr base = parse_primary();
    for (;;) {
      skip_ws();
      const std::size_t at = pos_;
      if (!accept('^')) return base;
      NodePtr ex = parse_exponent();
      if (depends_on_x(*ex)) throw ParseError("exponent must be a constant integer", at);
      const double v = eval(*ex, 0.0);
      if (!std::isfinite(v) || v != std::floor(v) || std::fabs(v) > 1e6)
        throw ParseError("non-integer exponent " + format_double(v), at);
      base = power(base, static_cast<int>(v));
    }
  }

  NodePtr parse_exponent() {
    if (accept('-')) return make(Op::Neg, parse_exponent());
    if (accept('+')) return parse_exponent();
    return parse_primary();
  }

  NodePtr parse_primary() {
    skip_ws();
    if (pos_ >= src_.size()) throw ParseError("unexpected end of expression", pos_);
    const char c = src_[pos_];
    if (c == '(') {
      ++pos_;
      NodePtr inner = parse_sum();
      expect(')');
      return inner;
    }
    if ((c >= '0' && c <= '9') || c == '.') return parse_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      const std::size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        ++pos_;
      const std::string_view name = src_.substr(start, pos_ - start);
      if (name == "x") return variable();
      if (name == "pi") return constant(std::numbers::pi);
      Op op;
      if (name == "sin") op = Op::Sin;
      else if (name == "cos") op = Op::Cos;
      else if (name == "exp") op = Op::Exp;
      else if (name == "tanh") op = Op::Tanh;
      else if (name == "abs") op = Op::Abs;
      else if (name == "sign") op = Op::Sign;
      else throw ParseError("unknown identifier '" + std::string(name) + "'", start);
      expect('(');
      NodePtr arg = parse_sum();
      expect(')');
      return make(op, arg);
    }
    throw ParseError("unexpected character '" + std::string(1, c) + "'", pos_);
  }

  NodePtr parse_number() {
    const std::size_t start = pos_;
    double v = 0.0;
    const char* first = src_.data() + pos_;
    const char* last = src_.data() + src_.size();
    auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr == first) throw ParseError("malformed number", start);
    pos_ += static_cast<std::size_t>(ptr - first);
    return constant(v);
  }
};

}  // namespace detail

// Immutable expression tree; cheap to copy and safe to share across threads.
class Expr {
 public:
  Expr() : root_(detail::constant(0.0)) {}
  explicit Expr(NodePtr root) : root_(std::move(root)) {}

  static Expr parse(std::string_view source) { return Expr(detail::Parser(source).parse()); }
  static Expr constant(double v) { return Expr(detail::constant(v)); }

  double operator()(double x) const { return detail::eval(*root_, x); }
  double eval(double x) const { return detail::eval(*root_, x); }

  // Division by zero and domain errors surface as a non-finite value with
  // ok == false rather than an exception.
  struct Checked {
    double value;
    bool ok;
  };
  Checked eval_checked(double x) const {
    const double v = detail::eval(*root_, x);
    return {v, std::isfinite(v)};
  }

  Expr derivative() const { return Expr(detail::derive(root_)); }

  std::string str() const {
    std::string out;
    detail::print(*root_, out);
    return out;
  }

  const Node& root() const { return *root_; }

 private:
  NodePtr root_;
};

}  // namespace jumpsde::expr
