// Thin LP/MILP/QP layer over the backend solver. Rows and columns are built
// incrementally; duals are reported for LPs in the "marginal cost of the
// binding bound" sign convention (>= rows give nonnegative duals when minimizing).
#pragma once

#include <limits>
#include <map>
#include <string>
#include <vector>

#include "coalloc/types.hpp"

namespace coalloc::solver {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Var = int;

struct LinExpr {
  std::vector<std::pair<Var, double>> terms;
  double constant = 0.0;

  LinExpr() = default;
  LinExpr(Var v) { terms.emplace_back(v, 1.0); }  // NOLINT implicit
  LinExpr& add(Var v, double c) {
    if (c != 0.0) terms.emplace_back(v, c);
    return *this;
  }
  LinExpr& add(const LinExpr& o, double scale = 1.0) {
    for (auto& [v, c] : o.terms) add(v, scale * c);
    constant += scale * o.constant;
    return *this;
  }
  LinExpr& operator+=(const LinExpr& o) { return add(o); }
  LinExpr& operator-=(const LinExpr& o) { return add(o, -1.0); }
};

enum class Status { Optimal, Infeasible, Unbounded, IterationLimit, TimeLimit, Error };

std::string to_string(Status s);

struct SolveOptions {
  double feasibility_tol = 1e-8;
  double dual_tol = 1e-8;
  double mip_rel_gap = 1e-6;
  double integrality_tol = 1e-6;
  double time_limit = 0.0;  // seconds; 0 = none
  int threads = 1;
  bool log = false;
  std::string lp_export;  // write the model to this path before solving
};

struct Result {
  Status status = Status::Error;
  double objective = 0.0;
  std::vector<double> x;
  std::vector<double> row_dual;     // empty for MILPs
  std::vector<double> reduced_cost;  // empty for MILPs
  double mip_gap = 0.0;
  std::map<std::string, int> row_names;  // shared with the model that produced it

  bool ok() const { return status == Status::Optimal; }
  double value(Var v) const { return x[v]; }
  double value(const LinExpr& e) const {
    double s = e.constant;
    for (auto& [v, c] : e.terms) s += c * x[v];
    return s;
  }
  double dual(int row) const { return row_dual.at(row); }
  double dual(const std::string& row_name) const { return row_dual.at(row_names.at(row_name)); }
};

// Incrementally built optimization model (minimization).
class Model {
 public:
  Var add_var(const std::string& name, double lb, double ub, double obj = 0.0,
              bool integer = false);
  void set_obj(Var v, double c) { obj_[v] = c; }
  void add_obj(Var v, double c) { obj_[v] += c; }
  void add_obj(const LinExpr& e, double scale = 1.0) {
    for (auto& [v, c] : e.terms) obj_[v] += scale * c;
    obj_offset_ += scale * e.constant;
  }
  // 0.5 * coeff * v^2 (convex, diagonal Hessian is all the project needs)
  void add_quad_obj(Var v, double coeff) { quad_[v] += coeff; }

  // lb <= expr <= ub (constant side of expr folded into the bounds)
  int add_row(const std::string& name, double lb, const LinExpr& expr, double ub);
  int add_eq(const std::string& name, const LinExpr& expr, double rhs) {
    return add_row(name, rhs, expr, rhs);
  }
  int add_ge(const std::string& name, const LinExpr& expr, double rhs) {
    return add_row(name, rhs, expr, kInf);
  }
  int add_le(const std::string& name, const LinExpr& expr, double rhs) {
    return add_row(name, -kInf, expr, rhs);
  }

  void set_var_bounds(Var v, double lb, double ub) {
    lb_[v] = lb;
    ub_[v] = ub;
  }

  int num_vars() const { return (int)lb_.size(); }
  int num_rows() const { return (int)row_lb_.size(); }
  bool has_integers() const { return has_int_; }
  const std::string& var_name(Var v) const { return names_[v]; }

  Result solve(const SolveOptions& opt = {}) const;

 private:
  std::vector<double> lb_, ub_, obj_, quad_;
  std::vector<bool> integer_;
  bool has_int_ = false;
  std::vector<std::string> names_;
  std::vector<double> row_lb_, row_ub_;
  std::vector<int> row_start_{0};
  std::vector<int> col_index_;
  std::vector<double> coeff_;
  std::map<std::string, int> row_names_;
  double obj_offset_ = 0.0;
};

// Name of the active backend ("highs"); honors the COALLOC_SOLVER environment
// variable and rejects values that name an unavailable backend.
std::string backend_name();

}  // namespace coalloc::solver
