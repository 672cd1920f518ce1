#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>

#include "jumpsde/expr.hpp"
#include "jumpsde/jumps.hpp"

namespace jumpsde {

// Bad input: malformed expressions, inconsistent configuration, shape
// mismatches. The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A computation left its numerical domain: divergent path, complex square
// root off the principal branch, non-finite state. Exit code 2 in the CLI.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A scalar coefficient together with its first derivative.
struct Coefficient {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
  std::string label;

  double operator()(double x) const { return value(x); }
  double prime(double x) const { return derivative(x); }

  static Coefficient from_expr(const expr::Expr& e) {
    expr::Expr d = e.derivative();
    return {[e](double x) { return e(x); }, [d](double x) { return d(x); }, e.str()};
  }

  static Coefficient parse(const std::string& source) { return from_expr(expr::Expr::parse(source)); }

  static Coefficient constant(double c) {
    return {[c](double) { return c; }, [](double) { return 0.0; }, expr::detail::format_double(c)};
  }

  // Derivative by central difference with step delta.
  static Coefficient with_central_difference(std::function<double(double)> f, double delta, std::string label = {}) {
    auto d = [f, delta](double x) { return (f(x + delta) - f(x - delta)) / (2.0 * delta); };
    return {std::move(f), std::move(d), std::move(label)};
  }
};

// dX = f(X) dt + g(X) dW + gamma * int z N(dt,dz), X(0) = x0.
struct SdeModel {
  Coefficient drift;
  Coefficient diffusion;
  double x0 = 0.0;
  JumpSpec jumps{};
};

}  // namespace jumpsde
