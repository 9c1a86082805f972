#pragma once

// Central finite-difference verification of the hand-written backward
// pass, per parameter block, on one scene. Context choices are frozen at
// the unperturbed argmax so the checked function is smooth.

#include "arn/model.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace arn {

struct GradientBlockReport {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradientCheckReport {
  std::vector<GradientBlockReport> blocks;
  double worst = 0.0;
  std::string worst_block;
  bool pass = true;
};

namespace detail {

// Relative error with a floor: entries where both gradients are tiny are
// held to an absolute bound of tolerance * kRelErrFloor instead, which
// stays two orders of magnitude above the cancellation noise of central
// differences at h = 1e-5 on desk-scale losses.
inline constexpr double kRelErrFloor = 1e-3;

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), kRelErrFloor});
  return std::abs(a - b) / denom;
}

}  // namespace detail

/// Compares a precomputed analytic gradient against central finite
/// differences of `loss` over every block of `params`.
inline GradientCheckReport compare_gradients(
    ArnParams<double>& params, ArnParams<double>& analytic,
    const std::function<double()>& loss, double tolerance, double h = 1e-5) {
  auto param_blocks = collect_blocks(params);
  auto grad_blocks = collect_blocks(analytic);
  GradientCheckReport report;
  for (std::size_t b = 0; b < param_blocks.size(); ++b) {
    GradientBlockReport block;
    block.name = param_blocks[b].name;
    double* data = param_blocks[b].data;
    const double* grad = grad_blocks[b].data;
    for (Eigen::Index k = 0; k < param_blocks[b].size(); ++k) {
      const double saved = data[k];
      data[k] = saved + h;
      const double up = loss();
      data[k] = saved - h;
      const double down = loss();
      data[k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw std::runtime_error("gradient_check: non-finite loss at block " +
                                 block.name);
      }
      const double numeric = (up - down) / (2.0 * h);
      block.max_rel_err = std::max(block.max_rel_err,
                                   detail::rel_err(grad[k], numeric));
    }
    block.pass = block.max_rel_err < tolerance;
    if (block.max_rel_err >= report.worst) {
      report.worst = block.max_rel_err;
      report.worst_block = block.name;
    }
    report.pass = report.pass && block.pass;
    report.blocks.push_back(std::move(block));
  }
  return report;
}

/// Image-level collaborative loss (mean over the scene's queries) with
/// context choices pinned to `frozen`; used as the scalar function under
/// finite differences.
inline double scene_loss_frozen(ArnParams<double>& params, const Scene& scene,
                                const Vec<double>& attr_class_weights,
                                const LossWeights& w,
                                const std::vector<std::vector<int>>& frozen) {
  const SceneEncoding<double> enc =
      encode_proposals(scene, params.proposal, params.dims.context_enabled);
  double total = 0.0;
  for (std::size_t qi = 0; qi < scene.queries.size(); ++qi) {
    const auto& query = scene.queries[qi];
    const auto trace =
        query_loss_forward(params, enc, query.token_ids, query.attribute_ids,
                           attr_class_weights, w, &frozen[qi]);
    total += trace.breakdown.total;
  }
  return total / static_cast<double>(scene.queries.size());
}

/// Runs the analytic backward pass on `scene`, then verifies every
/// parameter block against central finite differences at step `h`.
inline GradientCheckReport gradient_check(ArnParams<double>& params,
                                          const Scene& scene,
                                          const Vec<double>& attr_class_weights,
                                          const LossWeights& w,
                                          double tolerance, double h = 1e-5) {
  if (scene.queries.empty()) {
    throw std::invalid_argument("gradient_check: scene has no queries");
  }
  const SceneEncoding<double> enc =
      encode_proposals(scene, params.proposal, params.dims.context_enabled);

  ArnParams<double> grads = zeros_like(params);
  std::vector<std::vector<int>> frozen(scene.queries.size());
  const double mult = 1.0 / static_cast<double>(scene.queries.size());
  for (std::size_t qi = 0; qi < scene.queries.size(); ++qi) {
    const auto& query = scene.queries[qi];
    const auto trace = query_loss_forward(params, enc, query.token_ids,
                                          query.attribute_ids,
                                          attr_class_weights, w);
    if (!std::isfinite(trace.breakdown.total)) {
      throw std::runtime_error("gradient_check: non-finite loss");
    }
    frozen[qi] = trace.scores.context_choice;
    query_loss_backward(params, enc, trace, query.attribute_ids,
                        attr_class_weights, w, mult, grads);
  }

  auto loss = [&] {
    return scene_loss_frozen(params, scene, attr_class_weights, w, frozen);
  };
  return compare_gradients(params, grads, loss, tolerance, h);
}

}  // namespace arn
