#pragma once

// Transfer-matrix simulation of MZI meshes.
//
// MZI convention (modes m, m+1), with s = sin(theta/2), c = cos(theta/2):
//
//   M(theta, phi) = i e^{i theta/2} [ e^{i phi} s    c ]
//                                   [ e^{i phi} c   -s ]
//
// theta = pi is the bar state, theta = 0 the cross state. A MeshProgram of
// dimension N holds N(N-1)/2 MZIs in application order followed by a screen
// of output phases, so T = diag(e^{i out}) * M_K ... M_1. Programs come from
// a rectangular (Clements) nulling of the target unitary.

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "twopass/core.hpp"
#include "twopass/trainer.hpp"

namespace twopass {

template <typename Scalar>
using Complex = std::complex<Scalar>;

template <typename Scalar>
using ComplexMatrix = Eigen::Matrix<Complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using ComplexVector = Eigen::Matrix<Complex<Scalar>, Eigen::Dynamic, 1>;

/// Complex fields, one mode per row and one sample per column. Row-major so
/// that an MZI touches two contiguous rows.
template <typename Scalar>
using FieldBatch = Eigen::Matrix<Complex<Scalar>, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Mzi2x2 = Eigen::Matrix<Complex<Scalar>, 2, 2>;

/// Wraps an angle into [0, 2 pi).
template <typename Scalar>
Scalar wrap_phase(Scalar angle) {
  constexpr Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  Scalar out = std::fmod(angle, two_pi);
  if (out < Scalar(0)) out += two_pi;
  if (out >= two_pi) out = Scalar(0);
  return out;
}

template <typename Scalar>
struct MziSetting {
  Eigen::Index mode = 0;  // couples modes (mode, mode + 1)
  Scalar theta = 0;
  Scalar phi = 0;

  bool operator==(const MziSetting&) const = default;
};

template <typename Scalar>
struct MeshProgram {
  Eigen::Index n = 0;
  std::vector<MziSetting<Scalar>> mzis;
  std::vector<Scalar> out_phases;

  bool operator==(const MeshProgram&) const = default;

  void validate() const {
    if (n < 1) throw ShapeError("mesh dimension must be positive");
    if (static_cast<Eigen::Index>(out_phases.size()) != n) throw ShapeError("mesh needs one output phase per mode");
    for (const auto& m : mzis)
      if (m.mode < 0 || m.mode + 1 >= n)
        throw ShapeError("MZI on modes (" + std::to_string(m.mode) + ", " + std::to_string(m.mode + 1) +
                         ") is outside a " + std::to_string(n) + "-mode mesh");
  }

  /// The do-nothing program: every MZI in the bar state with a phase screen
  /// cancelling the bar-state phase.
  static MeshProgram identity(Eigen::Index n);
};

template <typename Scalar>
Mzi2x2<Scalar> mzi_transfer(Scalar theta, Scalar phi) {
  using C = Complex<Scalar>;
  const Scalar s = std::sin(theta / 2);
  const Scalar c = std::cos(theta / 2);
  const C k = C(0, 1) * std::polar(Scalar(1), theta / 2);
  const C ep = std::polar(Scalar(1), phi);
  Mzi2x2<Scalar> m;
  m << k * ep * s, k * c,
       k * ep * c, -k * s;
  return m;
}

template <typename Scalar>
Mzi2x2<Scalar> mzi_transfer(const MziSetting<Scalar>& s) {
  return mzi_transfer(s.theta, s.phi);
}

namespace detail {

/// Factors a 2x2 unitary as diag(e^{i a}, e^{i b}) * M(theta, phi).
template <typename Scalar>
void factor_2x2(const Mzi2x2<Scalar>& q, Scalar& theta, Scalar& phi, Scalar& a, Scalar& b) {
  using C = Complex<Scalar>;
  theta = 2 * std::atan2(std::abs(q(0, 0)), std::abs(q(0, 1)));
  const Scalar s = std::sin(theta / 2);
  const Scalar c = std::cos(theta / 2);
  const C k = C(0, 1) * std::polar(Scalar(1), theta / 2);
  if (c >= s) {
    a = std::arg(q(0, 1) / k);
    const Scalar b_plus_phi = std::arg(q(1, 0) / k);
    phi = s > 0 ? std::arg(q(0, 0) / k) - a : Scalar(0);
    b = b_plus_phi - phi;
  } else {
    const Scalar a_plus_phi = std::arg(q(0, 0) / k);
    b = std::arg(-q(1, 1) / k);
    phi = c > 0 ? std::arg(q(1, 0) / k) - b : Scalar(0);
    a = a_plus_phi - phi;
  }
}

template <typename Scalar, typename Rows>
void apply_rows(Rows& field, Eigen::Index m, const Mzi2x2<Scalar>& t) {
  auto top = field.row(m);
  auto bottom = field.row(m + 1);
  for (Eigen::Index j = 0; j < field.cols(); ++j) {
    const auto u = top(j);
    const auto v = bottom(j);
    top(j) = t(0, 0) * u + t(0, 1) * v;
    bottom(j) = t(1, 0) * u + t(1, 1) * v;
  }
}

}  // namespace detail

template <typename Scalar>
MeshProgram<Scalar> MeshProgram<Scalar>::identity(Eigen::Index n) {
  MeshProgram prog;
  prog.n = n;
  const Scalar pi = std::numbers::pi_v<Scalar>;
  // Bar state M(pi, 0) = diag(-1, 1); rectangular layout of n(n-1)/2 cells.
  std::vector<int> flips(static_cast<std::size_t>(n), 0);
  for (Eigen::Index column = 0; column < n; ++column)
    for (Eigen::Index m = column % 2; m + 1 < n; m += 2) {
      prog.mzis.push_back({m, pi, Scalar(0)});
      flips[static_cast<std::size_t>(m)] ^= 1;
    }
  for (Eigen::Index k = 0; k < n; ++k) prog.out_phases.push_back(flips[static_cast<std::size_t>(k)] ? pi : Scalar(0));
  return prog;
}

/// Propagates a batch of fields (modes x samples) through the mesh in place.
template <typename Scalar>
void mesh_apply(const MeshProgram<Scalar>& prog, FieldBatch<Scalar>& field) {
  if (field.rows() != prog.n)
    throw ShapeError("mesh_forward: field has " + std::to_string(field.rows()) + " modes, mesh has " +
                     std::to_string(prog.n));
  for (const auto& mzi : prog.mzis) detail::apply_rows(field, mzi.mode, mzi_transfer(mzi));
  for (Eigen::Index k = 0; k < prog.n; ++k)
    field.row(k) *= std::polar(Scalar(1), prog.out_phases[static_cast<std::size_t>(k)]);
}

template <typename Scalar, typename Derived>
ComplexVector<Scalar> mesh_forward(const MeshProgram<Scalar>& prog, const Eigen::MatrixBase<Derived>& field) {
  if (field.size() != prog.n)
    throw ShapeError("mesh_forward: field has " + std::to_string(field.size()) + " modes, mesh has " +
                     std::to_string(prog.n));
  FieldBatch<Scalar> batch = field.template cast<Complex<Scalar>>();
  mesh_apply(prog, batch);
  return batch.col(0);
}

/// Dense transfer matrix of the program.
template <typename Scalar>
ComplexMatrix<Scalar> mesh_matrix(const MeshProgram<Scalar>& prog) {
  FieldBatch<Scalar> t = FieldBatch<Scalar>::Identity(prog.n, prog.n);
  mesh_apply(prog, t);
  return t;
}

/// ||T^H T - I||_F for the program's transfer matrix.
template <typename Scalar>
Scalar unitarity_residual(const MeshProgram<Scalar>& prog) {
  const auto t = mesh_matrix(prog);
  return (t.adjoint() * t - ComplexMatrix<Scalar>::Identity(prog.n, prog.n)).norm();
}

/// Rectangular-mesh decomposition of a unitary matrix. Throws NumericError
/// when ||U^H U - I||_F exceeds `tolerance`.
template <typename Derived>
MeshProgram<typename Eigen::NumTraits<typename Derived::Scalar>::Real> clements_decompose(
    const Eigen::MatrixBase<Derived>& target, double tolerance = 1e-8) {
  using Scalar = typename Eigen::NumTraits<typename Derived::Scalar>::Real;
  using C = Complex<Scalar>;
  const Eigen::Index n = target.rows();
  if (n < 1 || target.cols() != n) throw ShapeError("clements_decompose needs a non-empty square matrix");
  ComplexMatrix<Scalar> u = target.template cast<C>();
  const double deviation =
      static_cast<double>((u.adjoint() * u - ComplexMatrix<Scalar>::Identity(n, n)).norm());
  if (!(deviation <= tolerance))
    throw NumericError("clements_decompose: matrix is not unitary (||U^H U - I||_F = " + std::to_string(deviation) +
                       ")");

  std::vector<MziSetting<Scalar>> right;
  std::vector<MziSetting<Scalar>> left;
  for (Eigen::Index i = 0; i + 1 < n; ++i) {
    if (i % 2 == 0) {
      for (Eigen::Index j = 0; j <= i; ++j) {
        // null u(r, c) by mixing columns c, c+1 from the right
        const Eigen::Index r = n - 1 - j;
        const Eigen::Index c = i - j;
        const C x = u(r, c);
        const C y = u(r, c + 1);
        const Scalar theta = 2 * std::atan2(std::abs(y), std::abs(x));
        const Scalar phi = std::arg(x) - std::arg(-y);
        const Mzi2x2<Scalar> mh = mzi_transfer(theta, phi).adjoint();
        for (Eigen::Index row = 0; row < n; ++row) {
          const C a = u(row, c);
          const C b = u(row, c + 1);
          u(row, c) = a * mh(0, 0) + b * mh(1, 0);
          u(row, c + 1) = a * mh(0, 1) + b * mh(1, 1);
        }
        right.push_back({c, theta, phi});
      }
    } else {
      for (Eigen::Index j = 0; j <= i; ++j) {
        // null u(r, c) by mixing rows r-1, r from the left
        const Eigen::Index r = n - 1 - i + j;
        const Eigen::Index c = j;
        const Eigen::Index m = r - 1;
        const C x = u(m, c);
        const C y = u(r, c);
        const Scalar theta = 2 * std::atan2(std::abs(x), std::abs(y));
        const Scalar phi = std::arg(y) - std::arg(x);
        const Mzi2x2<Scalar> t = mzi_transfer(theta, phi);
        for (Eigen::Index col = 0; col < n; ++col) {
          const C a = u(m, col);
          const C b = u(r, col);
          u(m, col) = t(0, 0) * a + t(0, 1) * b;
          u(r, col) = t(1, 0) * a + t(1, 1) * b;
        }
        left.push_back({m, theta, phi});
      }
    }
  }

  // u is now diagonal: target = L_1^H ... L_K^H D R_J ... R_1. Move each
  // L^H through the diagonal, L^H D = D' M', innermost first.
  std::vector<C> diag(static_cast<std::size_t>(n));
  for (Eigen::Index k = 0; k < n; ++k) diag[static_cast<std::size_t>(k)] = u(k, k) / std::abs(u(k, k));
  std::vector<MziSetting<Scalar>> moved;
  moved.reserve(left.size());
  for (auto it = left.rbegin(); it != left.rend(); ++it) {
    const auto m = static_cast<std::size_t>(it->mode);
    Mzi2x2<Scalar> d = Mzi2x2<Scalar>::Zero();
    d(0, 0) = diag[m];
    d(1, 1) = diag[m + 1];
    const Mzi2x2<Scalar> q = mzi_transfer(it->theta, it->phi).adjoint() * d;
    Scalar theta, phi, a, b;
    detail::factor_2x2(q, theta, phi, a, b);
    diag[m] = std::polar(Scalar(1), a);
    diag[m + 1] = std::polar(Scalar(1), b);
    moved.push_back({it->mode, theta, phi});
  }

  MeshProgram<Scalar> prog;
  prog.n = n;
  prog.mzis.reserve(right.size() + moved.size());
  for (const auto& s : right) prog.mzis.push_back({s.mode, wrap_phase(s.theta), wrap_phase(s.phi)});
  // moved holds M'_K ... M'_1 in creation order, which is application order.
  for (const auto& s : moved) prog.mzis.push_back({s.mode, wrap_phase(s.theta), wrap_phase(s.phi)});
  for (const auto& d : diag) prog.out_phases.push_back(wrap_phase(std::arg(d)));
  return prog;
}

/// Elementwise photodetection |z|^2.
template <typename Derived>
Batch<typename Eigen::NumTraits<typename Derived::Scalar>::Real> detect_intensity(
    const Eigen::MatrixBase<Derived>& field) {
  return field.cwiseAbs2();
}

/// Perturbs every phase (theta, phi and the output screen) with i.i.d.
/// Gaussian noise. The result is a valid program and therefore unitary.
template <typename Scalar>
MeshProgram<Scalar> apply_phase_noise(const MeshProgram<Scalar>& prog, double sigma_phase, std::uint64_t seed) {
  if (!(sigma_phase >= 0.0)) throw ConfigError("phase noise sigma must be non-negative");
  if (sigma_phase == 0.0) return prog;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma_phase);
  MeshProgram<Scalar> out = prog;
  for (auto& m : out.mzis) {
    m.theta = wrap_phase(static_cast<Scalar>(m.theta + noise(rng)));
    m.phi = wrap_phase(static_cast<Scalar>(m.phi + noise(rng)));
  }
  for (auto& p : out.out_phases) p = wrap_phase(static_cast<Scalar>(p + noise(rng)));
  return out;
}

/// A real weight matrix realized as scale * U * Sigma * V^H with two meshes
/// and passive per-mode attenuation Sigma in [0, 1].
template <typename Scalar>
struct PhotonicLayer {
  Eigen::Index rows = 0;  // output modes
  Eigen::Index cols = 0;  // input modes
  MeshProgram<Scalar> mesh_v;  // realizes V^H (cols x cols)
  std::vector<Scalar> sigma;   // min(rows, cols) attenuations
  MeshProgram<Scalar> mesh_u;  // realizes U (rows x rows)
  Scalar scale = 0;

  /// Complex output fields for complex input fields (cols x batch).
  FieldBatch<Scalar> propagate(FieldBatch<Scalar> field) const {
    if (field.rows() != cols)
      throw ShapeError("photonic layer expects " + std::to_string(cols) + " modes, got " + std::to_string(field.rows()));
    mesh_apply(mesh_v, field);
    FieldBatch<Scalar> mid = FieldBatch<Scalar>::Zero(rows, field.cols());
    for (std::size_t k = 0; k < sigma.size(); ++k)
      mid.row(static_cast<Eigen::Index>(k)) = field.row(static_cast<Eigen::Index>(k)) * (scale * sigma[k]);
    mesh_apply(mesh_u, mid);
    return mid;
  }

  /// Dense matrix realized by the hardware description.
  ComplexMatrix<Scalar> realized_matrix() const {
    FieldBatch<Scalar> eye = FieldBatch<Scalar>::Identity(cols, cols);
    return propagate(std::move(eye));
  }
};

template <typename Derived>
PhotonicLayer<typename Derived::Scalar> realize_weight(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  if (!w.allFinite()) throw NumericError("realize_weight: weights contain non-finite values");
  if (w.size() == 0) throw ShapeError("realize_weight: empty matrix");
  using Dense = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  Eigen::BDCSVD<Dense> svd(Dense(w), Eigen::ComputeFullU | Eigen::ComputeFullV);
  PhotonicLayer<Scalar> layer;
  layer.rows = w.rows();
  layer.cols = w.cols();
  const auto& s = svd.singularValues();
  layer.scale = s.size() > 0 ? s(0) : Scalar(0);
  for (Eigen::Index k = 0; k < s.size(); ++k)
    layer.sigma.push_back(layer.scale > 0 ? std::min(Scalar(1), s(k) / layer.scale) : Scalar(0));
  layer.mesh_u = clements_decompose(svd.matrixU());
  layer.mesh_v = clements_decompose(Dense(svd.matrixV().transpose()));
  return layer;
}

/// A Network with every weight matrix replaced by its mesh realization.
/// Activations between meshes are applied as ideal functions of the real
/// part of the coherent output field; Square uses photodetection.
template <typename Scalar>
struct PhotonicNetwork {
  std::vector<PhotonicLayer<Scalar>> layers;
  std::vector<ActivationKind> activations;

  static PhotonicNetwork realize(const Network<Scalar>& net) {
    PhotonicNetwork out;
    for (const auto& layer : net.layers()) {
      out.layers.push_back(realize_weight(layer.weights));
      out.activations.push_back(layer.activation);
    }
    return out;
  }

  ForwardTrace<Scalar> forward(const Batch<Scalar>& x0) const {
    if (layers.empty()) throw ShapeError("photonic forward on an empty network");
    if (x0.rows() != layers.front().cols) throw ShapeError("photonic forward: input dimension mismatch");
    ForwardTrace<Scalar> trace;
    trace.x.push_back(x0);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      FieldBatch<Scalar> field = trace.x.back().template cast<Complex<Scalar>>();
      field = layers[l].propagate(std::move(field));
      trace.z.emplace_back(field.real());
      if (activations[l] == ActivationKind::Square) {
        trace.x.emplace_back(detect_intensity(field));
      } else {
        trace.x.emplace_back(activation_apply(activations[l], trace.z.back()));
      }
    }
    return trace;
  }

  Scalar max_unitarity_residual() const {
    Scalar worst = 0;
    for (const auto& l : layers)
      worst = std::max({worst, unitarity_residual(l.mesh_u), unitarity_residual(l.mesh_v)});
    return worst;
  }
};

/// Propagator that evaluates through meshes realized from the network it is
/// handed, re-realizing whenever the weights differ from the cached copy.
template <typename Scalar>
class PhotonicBackend {
 public:
  ForwardTrace<Scalar> propagate(const Network<Scalar>& net, const Batch<Scalar>& x0) {
    if (!(cached_ == net)) {
      hardware_ = PhotonicNetwork<Scalar>::realize(net);
      cached_ = net;
      ++realizations_;
    }
    return hardware_.forward(x0);
  }

  PropagateFn<Scalar> propagator() {
    return [this](const Network<Scalar>& net, const Batch<Scalar>& x0) { return propagate(net, x0); };
  }

  const PhotonicNetwork<Scalar>& hardware() const { return hardware_; }
  std::size_t realizations() const { return realizations_; }

 private:
  Network<Scalar> cached_;
  PhotonicNetwork<Scalar> hardware_;
  std::size_t realizations_ = 0;
};

template <typename Scalar>
nlohmann::json to_json(const MeshProgram<Scalar>& prog) {
  nlohmann::json mzis = nlohmann::json::array();
  for (const auto& m : prog.mzis)
    mzis.push_back({{"i", m.mode}, {"theta", static_cast<double>(m.theta)}, {"phi", static_cast<double>(m.phi)}});
  nlohmann::json phases = nlohmann::json::array();
  for (auto p : prog.out_phases) phases.push_back(static_cast<double>(p));
  return {{"n", prog.n}, {"mzis", std::move(mzis)}, {"out_phases", std::move(phases)}};
}

template <typename Scalar = double>
MeshProgram<Scalar> mesh_from_json(const nlohmann::json& j) {
  try {
    MeshProgram<Scalar> prog;
    prog.n = j.at("n").get<Eigen::Index>();
    for (const auto& m : j.at("mzis"))
      prog.mzis.push_back({m.at("i").get<Eigen::Index>(), static_cast<Scalar>(m.at("theta").get<double>()),
                           static_cast<Scalar>(m.at("phi").get<double>())});
    for (const auto& p : j.at("out_phases")) prog.out_phases.push_back(static_cast<Scalar>(p.get<double>()));
    prog.validate();
    return prog;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed mesh program: ") + e.what());
  }
}

template <typename Scalar>
nlohmann::json to_json(const PhotonicLayer<Scalar>& layer) {
  nlohmann::json sigma = nlohmann::json::array();
  for (auto s : layer.sigma) sigma.push_back(static_cast<double>(s));
  return {{"rows", layer.rows},          {"cols", layer.cols},
          {"scale", static_cast<double>(layer.scale)}, {"sigma", std::move(sigma)},
          {"mesh_v", to_json(layer.mesh_v)}, {"mesh_u", to_json(layer.mesh_u)}};
}

}  // namespace twopass
