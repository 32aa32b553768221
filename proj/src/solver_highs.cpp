#include "coalloc/solver.hpp"

#include <cstdlib>
#include <map>

#include <Highs.h>

namespace coalloc::solver {

std::string to_string(Status s) {
  switch (s) {
    case Status::Optimal: return "optimal";
    case Status::Infeasible: return "infeasible";
    case Status::Unbounded: return "unbounded";
    case Status::IterationLimit: return "iteration_limit";
    case Status::TimeLimit: return "time_limit";
    default: return "error";
  }
}

std::string backend_name() {
  const char* env = std::getenv("COALLOC_SOLVER");
  std::string want = env && *env ? env : "highs";
  if (want != "highs")
    throw SolverError("COALLOC_SOLVER=" + want + " is not available (supported: highs)");
  return want;
}

Var Model::add_var(const std::string& name, double lb, double ub, double obj, bool integer) {
  lb_.push_back(lb);
  ub_.push_back(ub);
  obj_.push_back(obj);
  quad_.push_back(0.0);
  integer_.push_back(integer);
  has_int_ = has_int_ || integer;
  names_.push_back(name);
  return (int)lb_.size() - 1;
}

int Model::add_row(const std::string& name, double lb, const LinExpr& expr, double ub) {
  // accumulate duplicate terms so the backend sees a clean sparse row
  std::map<Var, double> acc;
  for (auto& [v, c] : expr.terms) acc[v] += c;
  for (auto& [v, c] : acc) {
    if (c == 0.0) continue;
    col_index_.push_back(v);
    coeff_.push_back(c);
  }
  row_start_.push_back((int)col_index_.size());
  row_lb_.push_back(lb == -kInf ? -kHighsInf : lb - expr.constant);
  row_ub_.push_back(ub == kInf ? kHighsInf : ub - expr.constant);
  int row = (int)row_lb_.size() - 1;
  if (!name.empty() && !row_names_.emplace(name, row).second)
    throw SolverError("duplicate row name: " + name);
  return row;
}

Result Model::solve(const SolveOptions& opt) const {
  backend_name();  // validate the environment selection

  HighsModel model;
  HighsLp& lp = model.lp_;
  lp.num_col_ = num_vars();
  lp.num_row_ = num_rows();
  lp.sense_ = ObjSense::kMinimize;
  lp.offset_ = obj_offset_;
  lp.col_cost_ = obj_;
  lp.col_lower_ = lb_;
  lp.col_upper_ = ub_;
  for (auto& b : lp.col_lower_)
    if (b == -kInf) b = -kHighsInf;
  for (auto& b : lp.col_upper_)
    if (b == kInf) b = kHighsInf;
  lp.row_lower_ = row_lb_;
  lp.row_upper_ = row_ub_;
  lp.a_matrix_.format_ = MatrixFormat::kRowwise;
  lp.a_matrix_.start_ = row_start_;
  lp.a_matrix_.index_ = col_index_;
  lp.a_matrix_.value_ = coeff_;

  bool quad = false;
  for (double q : quad_)
    if (q != 0.0) quad = true;
  if (quad) {
    if (has_int_) throw SolverError("quadratic objective with integer variables is unsupported");
    HighsHessian& h = model.hessian_;
    h.dim_ = num_vars();
    h.start_.resize(num_vars() + 1);
    for (Var v = 0; v < num_vars(); ++v) {
      h.start_[v] = (int)h.index_.size();
      if (quad_[v] != 0.0) {
        h.index_.push_back(v);
        h.value_.push_back(quad_[v]);
      }
    }
    h.start_[num_vars()] = (int)h.index_.size();
  }
  if (has_int_) {
    lp.integrality_.resize(num_vars());
    for (Var v = 0; v < num_vars(); ++v)
      lp.integrality_[v] = integer_[v] ? HighsVarType::kInteger : HighsVarType::kContinuous;
  }

  Highs highs;
  highs.setOptionValue("output_flag", opt.log);
  highs.setOptionValue("threads", opt.threads);
  highs.setOptionValue("primal_feasibility_tolerance", opt.feasibility_tol);
  highs.setOptionValue("dual_feasibility_tolerance", opt.dual_tol);
  highs.setOptionValue("mip_rel_gap", opt.mip_rel_gap);
  highs.setOptionValue("mip_feasibility_tolerance", opt.integrality_tol);
  if (opt.time_limit > 0) highs.setOptionValue("time_limit", opt.time_limit);
  highs.setOptionValue("random_seed", 0);

  if (highs.passModel(model) != HighsStatus::kOk) throw SolverError("backend rejected the model");
  if (!opt.lp_export.empty()) highs.writeModel(opt.lp_export);
  HighsStatus st = highs.run();
  if (st == HighsStatus::kError) throw SolverError("backend error during solve");

  Result res;
  res.row_names = row_names_;
  switch (highs.getModelStatus()) {
    case HighsModelStatus::kOptimal: res.status = Status::Optimal; break;
    case HighsModelStatus::kInfeasible: res.status = Status::Infeasible; break;
    case HighsModelStatus::kUnbounded:
    case HighsModelStatus::kUnboundedOrInfeasible: res.status = Status::Unbounded; break;
    case HighsModelStatus::kTimeLimit: res.status = Status::TimeLimit; break;
    case HighsModelStatus::kIterationLimit: res.status = Status::IterationLimit; break;
    default: res.status = Status::Error; break;
  }
  const HighsSolution& sol = highs.getSolution();
  if (sol.value_valid) {
    res.objective = highs.getObjectiveValue();
    res.x = sol.col_value;
    if (sol.dual_valid) {
      res.row_dual = sol.row_dual;
      res.reduced_cost = sol.col_dual;
    }
  }
  if (has_int_ && res.status == Status::Optimal) res.mip_gap = highs.getInfo().mip_gap;
  return res;
}

}  // namespace coalloc::solver
