#pragma once

// Energy factors of a contact factor graph.
//
// Every factor residual is affine in the force/input variables x = (u, lambda)
// once the configuration q is fixed: r(x; q) = G(q) x + h(q). A factor
// evaluated at some q is stored as an AffineFactor, which also carries the
// partial derivatives dG/dq, dh/dq (and d axis/dq for cones) needed to
// differentiate the energy with respect to q at a fixed x.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cfg/coulomb.hpp"
#include "cfg/energy.hpp"
#include "cfg/errors.hpp"
#include "cfg/scene.hpp"

namespace cfg {

enum class FactorLabel {
  NonPenetration,
  Complementarity,
  CoulombCone,
  CoulombPerp,
  QuasiDynamics,
  Touch,
  NoSlip,
  Goal,
  InputPrior,
  PosePrior,
};

inline const char* to_string(FactorLabel l) {
  switch (l) {
    case FactorLabel::NonPenetration: return "non-penetration";
    case FactorLabel::Complementarity: return "complementarity";
    case FactorLabel::CoulombCone: return "coulomb-cone";
    case FactorLabel::CoulombPerp: return "coulomb-perp";
    case FactorLabel::QuasiDynamics: return "quasi-dynamics";
    case FactorLabel::Touch: return "touch";
    case FactorLabel::NoSlip: return "no-slip";
    case FactorLabel::Goal: return "goal";
    case FactorLabel::InputPrior: return "input-prior";
    case FactorLabel::PosePrior: return "pose-prior";
  }
  return "?";
}

inline ConstraintKind kind_of(FactorLabel l) {
  switch (l) {
    case FactorLabel::NonPenetration: return ConstraintKind::Inequality;
    case FactorLabel::CoulombCone: return ConstraintKind::Cone;
    default: return ConstraintKind::Equality;
  }
}

/// Immutable description of one factor; resolved against a layout when the
/// graph is linearized at a configuration.
struct FactorSpec {
  FactorLabel label = FactorLabel::Goal;
  ConstraintKind kind = ConstraintKind::Equality;
  double weight = 1.0;
  int knot = 0;      // configuration knot whose features the factor reads
  int contact = -1;  // contact candidate index
  int body = -1;     // dynamics / goal / prior body
  int case_index = 0;
  std::optional<double> target_angle;
  std::optional<Vec2> target_position;
  Vec3 reference = Vec3::Zero();
};

/// A factor evaluated at a fixed configuration.
struct AffineFactor {
  FactorLabel label = FactorLabel::Goal;
  ConstraintKind kind = ConstraintKind::Equality;
  double weight = 1.0;
  Vec2 axis = Vec2::UnitY();
  int spec = -1;  // index of the originating FactorSpec

  std::vector<int> x_cols;
  MatrixXd G;  // rows x |x_cols|
  VectorXd h;

  std::vector<int> q_cols;
  MatrixXd dh_dq;                  // rows x |q_cols|
  std::vector<MatrixXd> dG_dq;     // one rows x |q_cols| matrix per x column
  Eigen::Matrix2Xd daxis_dq;       // cone factors only

  Eigen::Index rows() const { return h.size(); }

  VectorXd residual(const VectorXd& x) const {
    VectorXd r = h;
    for (std::size_t j = 0; j < x_cols.size(); ++j) r += G.col(static_cast<Eigen::Index>(j)) * x(x_cols[j]);
    return r;
  }

  double energy(const VectorXd& x) const { return weight * cfg::energy(kind, residual(x), axis); }

  /// d r / d q (local q columns) at fixed x.
  MatrixXd residual_q_jacobian(const VectorXd& x) const {
    MatrixXd j = dh_dq;
    for (std::size_t k = 0; k < x_cols.size(); ++k)
      if (!dG_dq.empty()) j += dG_dq[k] * x(x_cols[k]);
    return j;
  }

  /// Partial derivative of the weighted energy with respect to q (local q columns).
  Eigen::RowVectorXd energy_q_gradient(const VectorXd& x) const {
    const VectorXd r = residual(x);
    const auto d = energy_derivatives(kind, r, axis);
    Eigen::RowVectorXd g = d.gradient.transpose() * residual_q_jacobian(x);
    if (kind == ConstraintKind::Cone && daxis_dq.cols() > 0)
      g += cone_energy_axis_gradient(r, axis).transpose() * daxis_dq;
    return weight * g;
  }
};

/// Tracks the local q columns of a factor under construction.
class QColumns {
 public:
  int local(int global) {
    for (std::size_t i = 0; i < cols_.size(); ++i)
      if (cols_[i] == global) return static_cast<int>(i);
    cols_.push_back(global);
    return static_cast<int>(cols_.size()) - 1;
  }
  /// Registers every non-negative index of `globals` and returns their local ids (-1 stays -1).
  template <std::size_t N>
  std::array<int, N> map(const std::array<int, N>& globals) {
    std::array<int, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = globals[i] >= 0 ? local(globals[i]) : -1;
    return out;
  }
  const std::vector<int>& cols() const { return cols_; }
  int size() const { return static_cast<int>(cols_.size()); }

 private:
  std::vector<int> cols_;
};

/// Equation-of-motion residual A dq - b - J_u^T u - J_c^T lambda.
inline VectorXd quasi_dynamics_residual(const MatrixXd& A, const VectorXd& dq, const VectorXd& b,
                                        const MatrixXd& Ju, const VectorXd& u, const MatrixXd& Jc,
                                        const VectorXd& lambda) {
  if (A.rows() != A.cols() || A.cols() != dq.size() || b.size() != dq.size())
    throw InvalidArgument("quasi-dynamics: A, dq and b dimensions disagree");
  if (Ju.rows() != u.size() || (u.size() > 0 && Ju.cols() != dq.size()))
    throw InvalidArgument("quasi-dynamics: input Jacobian does not match u");
  if (Jc.rows() != lambda.size() || (lambda.size() > 0 && Jc.cols() != dq.size()))
    throw InvalidArgument("quasi-dynamics: contact Jacobian does not match the stacked impulses");
  VectorXd r = A * dq - b;
  if (u.size() > 0) r -= Ju.transpose() * u;
  if (lambda.size() > 0) r -= Jc.transpose() * lambda;
  return r;
}

struct FactorSetOptions {
  std::vector<int> dynamics_knots{0};  // knots that carry (u, lambda)
  int cases = 1;                       // nominal + perturbation replicas (static task)
  bool coulomb_perp = false;
};

struct CandidateMode {
  ContactMode mode = ContactMode::Free;
};

/// Builds the task-specific factor set for the given contact candidates.
///   static: per contact {g >= 0, g*lambda = 0, force cone}, equilibrium per body and case;
///   stick:  per knot and maintained contact {g = 0, v_t = 0, force cone}, other
///           candidates as free contacts, quasi-dynamics per body and knot.
inline std::vector<FactorSpec> build_factor_set(Task task, int num_bodies,
                                                const std::vector<CandidateMode>& contacts,
                                                const FactorSetOptions& opt) {
  if (contacts.empty()) throw ModelError("task requires at least one contact candidate");
  std::vector<FactorSpec> out;
  auto add = [&](FactorLabel label, int knot, int contact, int body, int c) {
    FactorSpec f;
    f.label = label;
    f.kind = kind_of(label);
    f.knot = knot;
    f.contact = contact;
    f.body = body;
    f.case_index = c;
    out.push_back(f);
  };
  const int n = static_cast<int>(contacts.size());
  if (task == Task::Static) {
    for (int knot : opt.dynamics_knots) {
      for (int c = 0; c < n; ++c) {
        add(FactorLabel::NonPenetration, knot, c, -1, -1);
        add(FactorLabel::Complementarity, knot, c, -1, -1);
        add(FactorLabel::CoulombCone, knot, c, -1, -1);
      }
      for (int k = 0; k < opt.cases; ++k)
        for (int b = 0; b < num_bodies; ++b) add(FactorLabel::QuasiDynamics, knot, -1, b, k);
    }
    return out;
  }
  const bool any_stick = std::any_of(contacts.begin(), contacts.end(),
                                     [](const auto& c) { return c.mode == ContactMode::Stick; });
  if (!any_stick) throw ModelError("stick task requires at least one maintained contact");
  for (int knot : opt.dynamics_knots) {
    for (int c = 0; c < n; ++c) {
      if (contacts[static_cast<std::size_t>(c)].mode == ContactMode::Stick) {
        add(FactorLabel::Touch, knot, c, -1, -1);
        add(FactorLabel::NoSlip, knot, c, -1, -1);
        add(FactorLabel::CoulombCone, knot, c, -1, -1);
        if (opt.coulomb_perp) add(FactorLabel::CoulombPerp, knot, c, -1, -1);
      } else {
        add(FactorLabel::NonPenetration, knot, c, -1, -1);
        add(FactorLabel::Complementarity, knot, c, -1, -1);
        add(FactorLabel::CoulombCone, knot, c, -1, -1);
      }
    }
    for (int b = 0; b < num_bodies; ++b) add(FactorLabel::QuasiDynamics, knot, -1, b, 0);
  }
  return out;
}

}  // namespace cfg
