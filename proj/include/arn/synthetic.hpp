#pragma once

// Deterministic synthetic scenes for desk-scale end-to-end verification.
// Proposals carry (category, color) pairs encoded into subject_raw as
// noisy one-hot blocks; queries come from three template families with a
// unique referent by construction.

#include "arn/scene.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace arn {

inline const std::vector<std::string>& synth_categories() {
  static const std::vector<std::string> v = {"ball", "box", "cat", "dog", "car"};
  return v;
}

inline const std::vector<std::string>& synth_colors() {
  static const std::vector<std::string> v = {"red", "green", "blue", "yellow",
                                             "purple"};
  return v;
}

inline const std::vector<std::string>& synth_location_words() {
  static const std::vector<std::string> v = {"leftmost", "rightmost", "topmost",
                                             "bottommost"};
  return v;
}

struct SynthConfig {
  std::uint64_t seed = 0;
  int n_scenes = 100;
  int proposals_per_scene = 5;
  int grid_rows = 3;
  int grid_cols = 3;
  int queries_per_scene = 3;
  double image_w = 480.0;
  double image_h = 480.0;
  double noise_sigma = 0.1;
  int pad_dims = 6;  // trailing noise-only block of subject_raw

  int feature_dim() const {
    return static_cast<int>(synth_categories().size() + synth_colors().size()) +
           pad_dims;
  }
};

namespace synth_detail {

struct ProposalMeta {
  int category = 0;
  int color = 0;
};

inline double center_distance(const Box& a, const Box& b) {
  const double dx = a.center_x() - b.center_x();
  const double dy = a.center_y() - b.center_y();
  return std::sqrt(dx * dx + dy * dy);
}

// Unique (color, category) proposal indices.
inline std::vector<int> unique_color_category(const std::vector<ProposalMeta>& meta) {
  std::vector<int> out;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    bool unique = true;
    for (std::size_t j = 0; j < meta.size(); ++j) {
      if (i != j && meta[i].category == meta[j].category &&
          meta[i].color == meta[j].color) {
        unique = false;
        break;
      }
    }
    if (unique) out.push_back(static_cast<int>(i));
  }
  return out;
}

inline std::vector<int> members_of_category(const std::vector<ProposalMeta>& meta,
                                            int category) {
  std::vector<int> out;
  for (std::size_t i = 0; i < meta.size(); ++i) {
    if (meta[i].category == category) out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace synth_detail

/// Deterministic per seed. Every emitted query has exactly one referent
/// satisfying its template; scenes where a template cannot be instantiated
/// are resampled (bounded retries).
inline std::vector<Scene> generate_synthetic(const SynthConfig& cfg) {
  using synth_detail::ProposalMeta;
  if (cfg.proposals_per_scene < 2) {
    throw std::invalid_argument("generate_synthetic: need >= 2 proposals per scene");
  }
  if (cfg.proposals_per_scene > cfg.grid_rows * cfg.grid_cols) {
    throw std::invalid_argument("generate_synthetic: grid too small for proposal count");
  }
  const int n_cat = static_cast<int>(synth_categories().size());
  const int n_col = static_cast<int>(synth_colors().size());
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, cfg.noise_sigma);

  // Margins that keep the template semantics unambiguous and learnable.
  const double loc_gap_x = 0.10 * cfg.image_w;
  const double loc_gap_y = 0.10 * cfg.image_h;
  const double context_margin = 0.65;  // nearest / second-nearest ratio bound

  std::vector<Scene> scenes;
  scenes.reserve(static_cast<std::size_t>(cfg.n_scenes));

  for (int scene_idx = 0; scene_idx < cfg.n_scenes; ++scene_idx) {
    bool built = false;
    for (int attempt = 0; attempt < 200 && !built; ++attempt) {
      Scene scene;
      char name[32];
      std::snprintf(name, sizeof(name), "img%06d", scene_idx);
      scene.image_id = name;
      scene.width = cfg.image_w;
      scene.height = cfg.image_h;

      // Occupied grid cells, jittered boxes inside each cell.
      std::vector<int> cells(static_cast<std::size_t>(cfg.grid_rows * cfg.grid_cols));
      for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
      std::shuffle(cells.begin(), cells.end(), rng);
      const double cw = cfg.image_w / cfg.grid_cols;
      const double ch = cfg.image_h / cfg.grid_rows;

      std::vector<ProposalMeta> meta(static_cast<std::size_t>(cfg.proposals_per_scene));
      // Force one duplicated category so location/context templates have
      // a pool to discriminate within.
      const int dup_cat = static_cast<int>(rng() % static_cast<std::uint64_t>(n_cat));
      for (int i = 0; i < cfg.proposals_per_scene; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        meta[iu].category =
            (i < 2) ? dup_cat : static_cast<int>(rng() % static_cast<std::uint64_t>(n_cat));
        meta[iu].color = static_cast<int>(rng() % static_cast<std::uint64_t>(n_col));

        const int cell = cells[iu];
        const double cx0 = (cell % cfg.grid_cols) * cw;
        const double cy0 = (cell / cfg.grid_cols) * ch;
        const double bw = (0.45 + 0.35 * unit(rng)) * cw;
        const double bh = (0.45 + 0.35 * unit(rng)) * ch;
        const double jx = (unit(rng) - 0.5) * (cw - bw);
        const double jy = (unit(rng) - 0.5) * (ch - bh);
        const double bx = cx0 + (cw - bw) / 2 + jx;
        const double by = cy0 + (ch - bh) / 2 + jy;

        Proposal p;
        p.id = i;
        p.box = Box{bx, by, bx + bw, by + bh};
        p.category = meta[iu].category;
        p.subject_raw.assign(static_cast<std::size_t>(cfg.feature_dim()), 0.0f);
        p.subject_raw[static_cast<std::size_t>(meta[iu].category)] = 1.0f;
        p.subject_raw[static_cast<std::size_t>(n_cat + meta[iu].color)] = 1.0f;
        for (auto& x : p.subject_raw) x += static_cast<float>(gauss(rng));
        scene.proposals.push_back(std::move(p));
      }

      // Query slots cycle through the template families.
      bool ok = true;
      for (int slot = 0; slot < cfg.queries_per_scene && ok; ++slot) {
        const int family = slot % 3;
        QueryRecord q;
        bool made = false;

        if (family == 0) {
          // Subject template: "<color> <category>", unique pair referent.
          const auto uniques = synth_detail::unique_color_category(meta);
          if (!uniques.empty()) {
            const int pick =
                uniques[rng() % static_cast<std::uint64_t>(uniques.size())];
            const auto pu = static_cast<std::size_t>(pick);
            q.words = {synth_colors()[static_cast<std::size_t>(meta[pu].color)],
                       synth_categories()[static_cast<std::size_t>(meta[pu].category)]};
            q.attribute_words = {synth_colors()[static_cast<std::size_t>(meta[pu].color)]};
            q.template_tag = "subject";
            q.set_gt_proposal(pick);
            made = true;
          }
        } else if (family == 1) {
          // Location template: "<direction> <category>" over a category
          // with several instances, extreme separated by a clear gap.
          const auto members = synth_detail::members_of_category(meta, dup_cat);
          if (members.size() >= 2) {
            std::vector<int> dirs = {0, 1, 2, 3};
            std::shuffle(dirs.begin(), dirs.end(), rng);
            for (int dir : dirs) {
              const bool horizontal = dir < 2;
              auto key = [&](int idx) {
                const Box& b = scene.proposals[static_cast<std::size_t>(idx)].box;
                const double c = horizontal ? b.center_x() : b.center_y();
                return (dir == 0 || dir == 2) ? c : -c;  // minimize
              };
              int best = members[0];
              double best_key = key(best), second_key = 1e300;
              for (std::size_t mi = 1; mi < members.size(); ++mi) {
                const double k = key(members[mi]);
                if (k < best_key) {
                  second_key = best_key;
                  best_key = k;
                  best = members[mi];
                } else {
                  second_key = std::min(second_key, k);
                }
              }
              const double gap = horizontal ? loc_gap_x : loc_gap_y;
              if (second_key - best_key >= gap) {
                q.words = {synth_location_words()[static_cast<std::size_t>(dir)],
                           synth_categories()[static_cast<std::size_t>(dup_cat)]};
                q.template_tag = "location";
                q.set_gt_proposal(best);
                made = true;
                break;
              }
            }
          }
        } else {
          // Context template: "<catA> next to the [<color>] <catB>"; the
          // referent is the catA instance nearest to the unique anchor by
          // a clear margin.
          const auto members = synth_detail::members_of_category(meta, dup_cat);
          std::vector<int> anchors;
          for (std::size_t i = 0; i < meta.size(); ++i) {
            if (meta[i].category != dup_cat) anchors.push_back(static_cast<int>(i));
          }
          std::shuffle(anchors.begin(), anchors.end(), rng);
          for (int anchor : anchors) {
            if (members.size() < 2) break;
            const auto au = static_cast<std::size_t>(anchor);
            // Anchor must be unique: by category alone, or by (color, category).
            const auto same_cat =
                synth_detail::members_of_category(meta, meta[au].category);
            bool cat_unique = same_cat.size() == 1;
            bool pair_unique = true;
            for (int j : same_cat) {
              if (j != anchor && meta[static_cast<std::size_t>(j)].color == meta[au].color) {
                pair_unique = false;
              }
            }
            if (!cat_unique && !pair_unique) continue;

            int nearest = -1;
            double d1 = 1e300, d2 = 1e300;
            for (int m : members) {
              const double d = synth_detail::center_distance(
                  scene.proposals[static_cast<std::size_t>(m)].box,
                  scene.proposals[au].box);
              if (d < d1) {
                d2 = d1;
                d1 = d;
                nearest = m;
              } else {
                d2 = std::min(d2, d);
              }
            }
            if (nearest >= 0 && d1 <= context_margin * d2) {
              const std::string& cat_a =
                  synth_categories()[static_cast<std::size_t>(dup_cat)];
              const std::string& cat_b =
                  synth_categories()[static_cast<std::size_t>(meta[au].category)];
              if (cat_unique) {
                q.words = {cat_a, "next", "to", "the", cat_b};
              } else {
                q.words = {cat_a, "next", "to", "the",
                           synth_colors()[static_cast<std::size_t>(meta[au].color)],
                           cat_b};
              }
              q.template_tag = "context";
              q.set_gt_proposal(nearest);
              made = true;
              break;
            }
          }
        }

        if (made) {
          scene.queries.push_back(std::move(q));
        } else {
          ok = false;  // resample the whole scene
        }
      }

      if (ok && !scene.queries.empty()) {
        scene.validate();
        scenes.push_back(std::move(scene));
        built = true;
      }
    }
    if (!built) {
      throw std::runtime_error(
          "generate_synthetic: could not satisfy the templates after bounded "
          "retries; relax the layout configuration");
    }
  }
  return scenes;
}

}  // namespace arn
