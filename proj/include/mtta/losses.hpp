#pragma once

// Loss terms shared by pre-training and test-time adaptation.

#include <vector>

#include "mtta/graph.hpp"
#include "mtta/kinematics.hpp"
#include "mtta/networks.hpp"

namespace mtta {

// Detected keypoints [N,22,2] in pixels and per-joint confidences [N,22].
struct KeypointTargets {
  Array keypoints;
  Array confidence;
};
KeypointTargets keypoint_targets(const std::vector<ObservationFeature>& obs);

// mean |a - b|
ad::Var l1_mean(ad::Var a, ad::Var b);

// Confidence-weighted mean absolute reprojection error in normalized image
// units (pixels * 2 / image size). Zero-confidence joints drop out; a batch
// with no confident joint yields 0.
ad::Var reprojection_loss(const Camera& cam, const Skeleton& skel, const PoseOutputs& pose, const KeypointTargets& targets);

}  // namespace mtta
