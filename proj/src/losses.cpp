#include "mtta/losses.hpp"

#include "mtta/ops.hpp"

namespace mtta {

KeypointTargets keypoint_targets(const std::vector<ObservationFeature>& obs) {
  std::vector<double> kp, conf;
  kp.reserve(obs.size() * kJoints * 2);
  conf.reserve(obs.size() * kJoints);
  for (const auto& o : obs) {
    for (std::size_t j = 0; j < kJoints; ++j) {
      kp.push_back(o.keypoints(static_cast<Eigen::Index>(j), 0));
      kp.push_back(o.keypoints(static_cast<Eigen::Index>(j), 1));
      conf.push_back(o.confidence[j]);
    }
  }
  return {Array({obs.size(), kJoints, 2}, std::move(kp)), Array({obs.size(), kJoints}, std::move(conf))};
}

ad::Var l1_mean(ad::Var a, ad::Var b) { return ad::mean(ad::abs(ad::sub(a, b))); }

ad::Var reprojection_loss(const Camera& cam, const Skeleton& skel, const PoseOutputs& pose, const KeypointTargets& t) {
  using namespace ad;
  Graph& g = *pose.theta.graph;
  const std::size_t n = t.confidence.dim(0);
  if (t.keypoints.shape() != Shape{n, kJoints, 2}) throw ShapeError("reprojection_loss: keypoints " + shape_str(t.keypoints.shape()));
  double total = 0.0;
  std::vector<double> w(n * kJoints * 2);
  for (std::size_t i = 0; i < n * kJoints; ++i) {
    total += t.confidence[i];
    w[2 * i] = t.confidence[i];
    w[2 * i + 1] = t.confidence[i];
  }
  if (total <= 0.0) return g.constant(Array::scalar(0.0));
  // Sum of weights counts both image axes, so the result is a per-coordinate mean.
  for (auto& v : w) v /= 2.0 * total;
  const Var uv = kin_ops::project(cam, kin_ops::forward_kinematics(skel, pose.theta, pose.beta, pose.psi));
  const Var scale = g.constant(Array({2}, {2.0 / cam.image_size.x(), 2.0 / cam.image_size.y()}));
  const Var diff = mul(sub(uv, g.constant(t.keypoints)), scale);
  return sum(mul(abs(diff), g.constant(Array({n, kJoints, 2}, std::move(w)))));
}

}  // namespace mtta
