#include "mtta/kinematics.hpp"

#include <cmath>
#include <string>

#include <Eigen/Geometry>
#include <Eigen/SVD>

namespace mtta {

namespace {

struct BoneSpec {
  int parent;
  const char* name;
  double x, y, z;  // rest offset from the parent, meters
};

// Offsets approximate an adult template standing upright, facing +z, left side on +x.
constexpr std::array<BoneSpec, kJoints> kBoneTable = {{
    {-1, "pelvis", 0.0, 0.0, 0.0},
    {0, "left_hip", 0.06, -0.09, 0.0},
    {0, "right_hip", -0.06, -0.09, 0.0},
    {0, "spine1", 0.0, 0.11, -0.01},
    {1, "left_knee", 0.04, -0.38, 0.0},
    {2, "right_knee", -0.04, -0.38, 0.0},
    {3, "spine2", 0.0, 0.13, 0.01},
    {4, "left_ankle", -0.01, -0.40, -0.04},
    {5, "right_ankle", 0.01, -0.40, -0.04},
    {6, "spine3", 0.0, 0.05, 0.0},
    {7, "left_foot", 0.02, -0.06, 0.12},
    {8, "right_foot", -0.02, -0.06, 0.12},
    {9, "neck", 0.0, 0.21, -0.03},
    {9, "left_collar", 0.07, 0.12, -0.02},
    {9, "right_collar", -0.07, 0.12, -0.02},
    {12, "head", 0.0, 0.09, 0.05},
    {13, "left_shoulder", 0.11, 0.03, -0.01},
    {14, "right_shoulder", -0.11, 0.03, -0.01},
    {16, "left_elbow", 0.26, -0.01, -0.02},
    {17, "right_elbow", -0.26, -0.01, -0.02},
    {18, "left_wrist", 0.25, 0.01, 0.0},
    {19, "right_wrist", -0.25, 0.01, 0.0},
}};

Skeleton build_standard() {
  Skeleton s;
  for (std::size_t j = 0; j < kJoints; ++j) {
    s.parent[j] = kBoneTable[j].parent;
    s.names[j] = kBoneTable[j].name;
    if (j > 0) {
      const Eigen::Vector3d off(kBoneTable[j].x, kBoneTable[j].y, kBoneTable[j].z);
      s.rest_length[j - 1] = off.norm();
      s.rest_dir[j - 1] = off / off.norm();
    }
  }
  for (std::size_t j = 0; j < kJoints; ++j) {
    s.mirror[j] = j;
    const std::string_view n = s.names[j];
    for (std::size_t k = 0; k < kJoints; ++k) {
      const std::string_view m = s.names[k];
      if (n.starts_with("left_") && m.starts_with("right_") && n.substr(5) == m.substr(6)) s.mirror[j] = k;
      if (n.starts_with("right_") && m.starts_with("left_") && n.substr(6) == m.substr(5)) s.mirror[j] = k;
    }
  }
  return s;
}

constexpr double kDegenerate = 1e-8;

// Gram-Schmidt pieces shared by the scalar and batched versions.
struct Rot6dParts {
  Eigen::Vector3d a1, a2, b1, b2, b3, u;
  double n1 = 0.0, nu = 0.0, s = 0.0;
};

Rot6dParts rot6d_parts(const double* r) {
  Rot6dParts p;
  p.a1 = Eigen::Vector3d(r[0], r[1], r[2]);
  p.a2 = Eigen::Vector3d(r[3], r[4], r[5]);
  p.n1 = p.a1.norm();
  if (p.n1 < kDegenerate) throw GeometryError("rot6d_to_matrix: first column has near-zero norm");
  p.b1 = p.a1 / p.n1;
  p.s = p.b1.dot(p.a2);
  p.u = p.a2 - p.s * p.b1;
  p.nu = p.u.norm();
  if (p.nu < kDegenerate * std::max(1.0, p.a2.norm())) {
    throw GeometryError("rot6d_to_matrix: columns are parallel");
  }
  p.b2 = p.u / p.nu;
  p.b3 = p.b1.cross(p.b2);
  return p;
}

// Pulls gradients on the three matrix columns back to the six inputs.
void rot6d_backward(const Rot6dParts& p, Eigen::Vector3d g1, Eigen::Vector3d g2, const Eigen::Vector3d& g3,
                    double* out) {
  g1 += p.b2.cross(g3);
  g2 += g3.cross(p.b1);
  const Eigen::Vector3d gu = (g2 - p.b2 * p.b2.dot(g2)) / p.nu;
  const Eigen::Vector3d ga2 = gu - p.b1 * p.b1.dot(gu);
  g1 += -p.b1.dot(gu) * p.a2 - p.s * gu;
  const Eigen::Vector3d ga1 = (g1 - p.b1 * p.b1.dot(g1)) / p.n1;
  for (int i = 0; i < 3; ++i) {
    out[i] += ga1[i];
    out[3 + i] += ga2[i];
  }
}

Eigen::Matrix3d parts_to_matrix(const Rot6dParts& p) {
  Eigen::Matrix3d m;
  m.col(0) = p.b1;
  m.col(1) = p.b2;
  m.col(2) = p.b3;
  return m;
}

}  // namespace

const Skeleton& Skeleton::standard() {
  static const Skeleton s = build_standard();
  return s;
}

PoseFrame PoseFrame::rest(const Eigen::Vector3d& translation) {
  PoseFrame p;
  for (std::size_t j = 0; j < kJoints; ++j) {
    p.theta[j * 6 + 0] = 1.0;
    p.theta[j * 6 + 4] = 1.0;
  }
  p.beta.fill(1.0);
  p.psi = {translation.x(), translation.y(), translation.z()};
  return p;
}

void PoseFrame::validate() const {
  for (double b : beta) {
    if (!(b >= 0.5 && b <= 2.0)) throw GeometryError("PoseFrame: bone scale outside [0.5, 2]");
  }
  for (double t : theta) {
    if (!std::isfinite(t)) throw GeometryError("PoseFrame: non-finite rotation");
  }
  for (double t : psi) {
    if (!std::isfinite(t)) throw GeometryError("PoseFrame: non-finite translation");
  }
}

void Camera::validate() const {
  if (!(focal > 0.0)) throw GeometryError("Camera: focal must be positive");
  if (principal_point.x() < 0 || principal_point.y() < 0 || principal_point.x() > image_size.x() ||
      principal_point.y() > image_size.y()) {
    throw GeometryError("Camera: principal point outside the image");
  }
}

Eigen::Matrix3d rot6d_to_matrix(std::span<const double, 6> r) { return parts_to_matrix(rot6d_parts(r.data())); }

std::array<double, 6> matrix_to_rot6d(const Eigen::Matrix3d& r) {
  if ((r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > 1e-6) {
    throw GeometryError("matrix_to_rot6d: input is not orthonormal");
  }
  return {r(0, 0), r(1, 0), r(2, 0), r(0, 1), r(1, 1), r(2, 1)};
}

Eigen::Matrix3d axis_angle(const Eigen::Vector3d& v) {
  const double angle = v.norm();
  if (angle < 1e-15) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(angle, v / angle).toRotationMatrix();
}

Eigen::Matrix3d rotation_y(double angle) { return Eigen::AngleAxisd(angle, Eigen::Vector3d::UnitY()).toRotationMatrix(); }

Joints forward_kinematics(const Skeleton& skel, const PoseFrame& pose) {
  std::array<Eigen::Matrix3d, kJoints> global;
  Joints out;
  for (std::size_t j = 0; j < kJoints; ++j) {
    const Eigen::Matrix3d local = rot6d_to_matrix(std::span<const double, 6>(pose.theta.data() + 6 * j, 6));
    const int p = skel.parent[j];
    if (p < 0) {
      global[j] = local;
      out.row(j) = Eigen::Vector3d(pose.psi[0], pose.psi[1], pose.psi[2]).transpose();
    } else {
      const Eigen::Vector3d offset = pose.beta[j - 1] * skel.rest_offset(j);
      out.row(j) = out.row(p) + (global[p] * offset).transpose();
      global[j] = global[p] * local;
    }
  }
  return out;
}

Projection project_2d(const Camera& cam, const Joints& joints) {
  Projection p;
  for (std::size_t j = 0; j < kJoints; ++j) {
    const double z = joints(j, 2);
    if (!(z > 0.1)) throw GeometryError("project_2d: joint " + std::to_string(j) + " has depth <= 0.1 m");
    p.uv(j, 0) = cam.focal * joints(j, 0) / z + cam.principal_point.x();
    p.uv(j, 1) = cam.focal * joints(j, 1) / z + cam.principal_point.y();
    p.visible[j] = p.uv(j, 0) >= 0 && p.uv(j, 0) < cam.image_size.x() && p.uv(j, 1) >= 0 &&
                   p.uv(j, 1) < cam.image_size.y();
  }
  return p;
}

namespace {

std::vector<std::size_t> valid_joints(std::span<const bool> valid) {
  std::vector<std::size_t> idx;
  for (std::size_t j = 0; j < kJoints; ++j) {
    if (valid.empty() || valid[j]) idx.push_back(j);
  }
  return idx;
}

}  // namespace

double mpjpe(const Joints& pred, const Joints& gt, std::span<const bool> gt_valid) {
  if (!gt_valid.empty() && gt_valid.size() != kJoints) throw GeometryError("mpjpe: validity mask must have 22 entries");
  if (!gt_valid.empty() && !gt_valid[0]) throw GeometryError("mpjpe: root joint must be valid");
  const auto idx = valid_joints(gt_valid);
  if (idx.empty()) throw GeometryError("mpjpe: no valid joints");
  double total = 0.0;
  for (auto j : idx) total += ((pred.row(j) - pred.row(0)) - (gt.row(j) - gt.row(0))).norm();
  return 1000.0 * total / static_cast<double>(idx.size());
}

double mpjpe_pa(const Joints& pred, const Joints& gt, std::span<const bool> gt_valid) {
  if (!gt_valid.empty() && gt_valid.size() != kJoints) throw GeometryError("mpjpe_pa: validity mask must have 22 entries");
  const auto idx = valid_joints(gt_valid);
  if (idx.size() < 3) throw GeometryError("mpjpe_pa: need at least 3 valid joints");
  const auto n = static_cast<Eigen::Index>(idx.size());
  Eigen::Matrix<double, Eigen::Dynamic, 3> p(n, 3), g(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.row(i) = pred.row(idx[i]);
    g.row(i) = gt.row(idx[i]);
  }
  const Eigen::RowVector3d mp = p.colwise().mean();
  const Eigen::RowVector3d mg = g.colwise().mean();
  p.rowwise() -= mp;
  g.rowwise() -= mg;
  const double var_p = p.squaredNorm();
  // Rank check on the predicted configuration: collinear points leave rotation undetermined.
  Eigen::JacobiSVD<Eigen::Matrix3d> shape_svd(p.transpose() * p);
  if (var_p < 1e-18 || shape_svd.singularValues()[1] < 1e-12 * std::max(1.0, shape_svd.singularValues()[0])) {
    throw GeometryError("mpjpe_pa: rank-deficient joint configuration");
  }
  // H = sum p_i g_i^T; R maps centered pred onto centered gt.
  const Eigen::Matrix3d h = p.transpose() * g;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0) d(2, 2) = -1.0;
  const Eigen::Matrix3d r = svd.matrixV() * d * svd.matrixU().transpose();
  const double s = (svd.singularValues().asDiagonal() * d).trace() / var_p;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector3d aligned = s * r * p.row(i).transpose();
    total += (aligned - g.row(i).transpose()).norm();
  }
  return 1000.0 * total / static_cast<double>(n);
}

namespace kin_ops {

using ad::Graph;
using ad::Var;

Var rot6d_to_matrix(Var r6d) {
  Graph& g = *r6d.graph;
  const Array& v = r6d.value();
  if (v.ndim() != 2 || v.dim(1) != 6) throw ShapeError("rot6d_to_matrix: expected [N,6], got " + shape_str(v.shape()));
  const std::size_t n = v.dim(0);
  std::vector<double> out(n * 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Eigen::Matrix3d m = parts_to_matrix(rot6d_parts(v.data().data() + 6 * i));
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) out[i * 9 + r * 3 + c] = m(r, c);
    }
  }
  const std::size_t ix = r6d.id;
  return g.record("rot6d_to_matrix", {ix}, Array(Shape{n, 3, 3}, std::move(out)),
                  [ix, n](Graph& gr, std::span<const double> gy) {
                    const Array& x = gr.value(ix);
                    auto gx = gr.grad_acc(ix);
                    for (std::size_t i = 0; i < n; ++i) {
                      const Rot6dParts p = rot6d_parts(x.data().data() + 6 * i);
                      const double* gm = gy.data() + 9 * i;
                      Eigen::Vector3d c1, c2, c3;
                      for (int r = 0; r < 3; ++r) {
                        c1[r] = gm[r * 3 + 0];
                        c2[r] = gm[r * 3 + 1];
                        c3[r] = gm[r * 3 + 2];
                      }
                      rot6d_backward(p, c1, c2, c3, gx.data() + 6 * i);
                    }
                  });
}

Var forward_kinematics(const Skeleton& skel, Var theta, Var beta, Var psi) {
  Graph& g = *theta.graph;
  if (beta.graph != &g || psi.graph != &g) throw ShapeError("forward_kinematics: operands on different graphs");
  const Array& tv = theta.value();
  const Array& bv = beta.value();
  const Array& pv = psi.value();
  if (tv.ndim() != 2 || tv.dim(1) != kThetaDim || bv.ndim() != 2 || bv.dim(1) != kBones || pv.ndim() != 2 ||
      pv.dim(1) != 3 || bv.dim(0) != tv.dim(0) || pv.dim(0) != tv.dim(0)) {
    throw ShapeError("forward_kinematics: expected theta [N,132], beta [N,21], psi [N,3], got " +
                     shape_str(tv.shape()) + ", " + shape_str(bv.shape()) + ", " + shape_str(pv.shape()));
  }
  const std::size_t n = tv.dim(0);
  std::vector<double> out(n * kJoints * 3);
  for (std::size_t i = 0; i < n; ++i) {
    std::array<Eigen::Matrix3d, kJoints> global;
    std::array<Eigen::Vector3d, kJoints> pos;
    for (std::size_t j = 0; j < kJoints; ++j) {
      const Eigen::Matrix3d local = parts_to_matrix(rot6d_parts(tv.data().data() + i * kThetaDim + 6 * j));
      const int p = skel.parent[j];
      if (p < 0) {
        global[j] = local;
        pos[j] = Eigen::Vector3d(pv[i * 3], pv[i * 3 + 1], pv[i * 3 + 2]);
      } else {
        pos[j] = pos[p] + global[p] * (bv[i * kBones + j - 1] * skel.rest_offset(j));
        global[j] = global[p] * local;
      }
      for (int c = 0; c < 3; ++c) out[(i * kJoints + j) * 3 + c] = pos[j][c];
    }
  }
  const std::size_t it = theta.id, ib = beta.id, ip = psi.id;
  const Skeleton* sk = &skel;
  return g.record(
      "forward_kinematics", {it, ib, ip}, Array(Shape{n, kJoints, 3}, std::move(out)),
      [it, ib, ip, n, sk](Graph& gr, std::span<const double> gy) {
        const Array& tv2 = gr.value(it);
        const Array& bv2 = gr.value(ib);
        auto gt = gr.grad_acc(it);
        auto gb = gr.grad_acc(ib);
        auto gp = gr.grad_acc(ip);
        for (std::size_t i = 0; i < n; ++i) {
          std::array<Rot6dParts, kJoints> parts;
          std::array<Eigen::Matrix3d, kJoints> local, global;
          for (std::size_t j = 0; j < kJoints; ++j) {
            parts[j] = rot6d_parts(tv2.data().data() + i * kThetaDim + 6 * j);
            local[j] = parts_to_matrix(parts[j]);
            const int p = sk->parent[j];
            global[j] = p < 0 ? local[j] : Eigen::Matrix3d(global[p] * local[j]);
          }
          std::array<Eigen::Vector3d, kJoints> g_pos;
          std::array<Eigen::Matrix3d, kJoints> g_glob;
          for (std::size_t j = 0; j < kJoints; ++j) {
            for (int c = 0; c < 3; ++c) g_pos[j][c] = gy[(i * kJoints + j) * 3 + c];
            g_glob[j].setZero();
          }
          // Children always carry larger indices than their parents.
          for (std::size_t j = kJoints; j-- > 1;) {
            const auto p = static_cast<std::size_t>(sk->parent[j]);
            const Eigen::Vector3d off = sk->rest_offset(j);
            const double scale = bv2[i * kBones + j - 1];
            g_pos[p] += g_pos[j];
            g_glob[p] += g_pos[j] * (scale * off).transpose();
            if (!gb.empty()) gb[i * kBones + j - 1] += g_pos[j].dot(global[p] * off);
            g_glob[p] += g_glob[j] * local[j].transpose();
            const Eigen::Matrix3d g_local = global[p].transpose() * g_glob[j];
            if (!gt.empty()) {
              rot6d_backward(parts[j], g_local.col(0), g_local.col(1), g_local.col(2),
                             gt.data() + i * kThetaDim + 6 * j);
            }
          }
          if (!gp.empty()) {
            for (int c = 0; c < 3; ++c) gp[i * 3 + c] += g_pos[0][c];
          }
          if (!gt.empty()) {
            rot6d_backward(parts[0], g_glob[0].col(0), g_glob[0].col(1), g_glob[0].col(2), gt.data() + i * kThetaDim);
          }
        }
      });
}

Var project(const Camera& cam, Var joints) {
  Graph& g = *joints.graph;
  const Array& jv = joints.value();
  if (jv.ndim() != 3 || jv.dim(2) != 3) throw ShapeError("project: expected [N,J,3], got " + shape_str(jv.shape()));
  const std::size_t pts = jv.dim(0) * jv.dim(1);
  std::vector<double> out(pts * 2);
  for (std::size_t k = 0; k < pts; ++k) {
    const double z = jv[k * 3 + 2];
    if (!(z > 0.1)) throw GeometryError("project: point with depth <= 0.1 m");
    out[k * 2] = cam.focal * jv[k * 3] / z + cam.principal_point.x();
    out[k * 2 + 1] = cam.focal * jv[k * 3 + 1] / z + cam.principal_point.y();
  }
  const std::size_t ij = joints.id;
  const double f = cam.focal;
  return g.record("project", {ij}, Array(Shape{jv.dim(0), jv.dim(1), 2}, std::move(out)),
                  [ij, pts, f](Graph& gr, std::span<const double> gy) {
                    const Array& v = gr.value(ij);
                    auto gx = gr.grad_acc(ij);
                    for (std::size_t k = 0; k < pts; ++k) {
                      const double x = v[k * 3], y = v[k * 3 + 1], z = v[k * 3 + 2];
                      const double gu = gy[k * 2], gv = gy[k * 2 + 1];
                      gx[k * 3] += gu * f / z;
                      gx[k * 3 + 1] += gv * f / z;
                      gx[k * 3 + 2] += -(gu * f * x + gv * f * y) / (z * z);
                    }
                  });
}

}  // namespace kin_ops
}  // namespace mtta
