#pragma once

// IoU > 0.5 grounding accuracy. Evaluation reads the ground-truth
// annotations; it never touches the reconstruction branches.

#include "arn/geometry.hpp"
#include "arn/model.hpp"
#include "arn/scene.hpp"

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace arn {

struct TemplateStat {
  int correct = 0;
  int total = 0;

  double accuracy() const {
    return total == 0 ? 0.0 : static_cast<double>(correct) / total;
  }
};

struct EvalReport {
  int total = 0;
  int correct = 0;
  double accuracy = 0.0;
  std::map<std::string, TemplateStat> per_template;
};

/// Strict inequality: IoU exactly 0.5 counts as incorrect.
inline bool grounding_correct(const Box& predicted, const Box& gt) {
  return iou(predicted, gt) > 0.5;
}

/// Accuracy of an arbitrary grounder `fn(scene, query_index) -> proposal
/// index`; every evaluated query must carry a ground-truth proposal.
template <typename Grounder>
EvalReport evaluate_with(const std::vector<Scene>& scenes, Grounder&& fn) {
  EvalReport report;
  for (const auto& scene : scenes) {
    for (std::size_t qi = 0; qi < scene.queries.size(); ++qi) {
      const QueryRecord& q = scene.queries[qi];
      const auto gt = q.gt_proposal();
      if (!gt.has_value()) {
        throw std::runtime_error("evaluate: query without ground truth in " +
                                 scene.image_id);
      }
      const int predicted = fn(scene, qi);
      if (predicted < 0 ||
          predicted >= static_cast<int>(scene.proposals.size())) {
        throw std::runtime_error("evaluate: predicted index out of range in " +
                                 scene.image_id);
      }
      const bool ok = grounding_correct(
          scene.proposals[static_cast<std::size_t>(predicted)].box,
          scene.proposals[static_cast<std::size_t>(*gt)].box);
      ++report.total;
      report.correct += ok ? 1 : 0;
      const std::string tag =
          q.template_tag.empty() ? std::string("untagged") : q.template_tag;
      auto& stat = report.per_template[tag];
      ++stat.total;
      stat.correct += ok ? 1 : 0;
    }
  }
  report.accuracy =
      report.total == 0 ? 0.0 : static_cast<double>(report.correct) / report.total;
  return report;
}

/// Model-based evaluation; scenes must carry token ids already.
template <typename T>
EvalReport evaluate(const std::vector<Scene>& scenes, const ArnParams<T>& params) {
  std::vector<SceneEncoding<T>> encodings;
  encodings.reserve(scenes.size());
  for (const auto& s : scenes) {
    encodings.push_back(
        encode_proposals(s, params.proposal, params.dims.context_enabled));
  }
  std::size_t scene_index = 0;
  const Scene* last_scene = nullptr;
  return evaluate_with(scenes, [&](const Scene& scene, std::size_t qi) {
    if (last_scene != &scene) {
      scene_index = static_cast<std::size_t>(&scene - scenes.data());
      last_scene = &scene;
    }
    return ground(params, encodings[scene_index],
                  scene.queries[qi].token_ids);
  });
}

}  // namespace arn
