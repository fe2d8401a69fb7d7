#pragma once

// Held-out evaluation: text -> CineGPT -> trajectory compared with the
// ground truth, next to what the tokenizer alone loses on the same set.

#include <cstdio>
#include <string>
#include <vector>

#include "chatcam/cinegpt.hpp"
#include "chatcam/dataset.hpp"
#include "chatcam/tokenizer.hpp"
#include "json.hpp"

namespace chatcam {

struct EvalRow {
  std::string text;
  std::uint64_t seed = 0;
  TrajectoryMse generated;  // CineGPT output vs ground truth
  TrajectoryMse floor;      // tokenizer reconstruction vs ground truth
};

struct EvalReport {
  std::vector<EvalRow> rows;
  TrajectoryMse mean;
  TrajectoryMse floor;

  nlohmann::json to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows) {
      rs.push_back({{"text", r.text},
                    {"seed", r.seed},
                    {"translation_mse", r.generated.translation},
                    {"rotation_mse", r.generated.rotation},
                    {"floor_translation_mse", r.floor.translation},
                    {"floor_rotation_mse", r.floor.rotation}});
    }
    return {{"pairs", rs},
            {"mean", {{"translation_mse", mean.translation}, {"rotation_mse", mean.rotation}}},
            {"tokenizer_floor", {{"translation_mse", floor.translation}, {"rotation_mse", floor.rotation}}}};
  }

  /// Two metric columns; rotation in degrees squared.
  std::string table() const {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof line, "%-18s %16s %16s\n", "Method", "Translation MSE", "Rotation MSE");
    out += line;
    std::snprintf(line, sizeof line, "%-18s %16.5f %16.5f\n", "CineGPT", mean.translation, mean.rotation);
    out += line;
    std::snprintf(line, sizeof line, "%-18s %16.5f %16.5f\n", "Tokenizer floor", floor.translation, floor.rotation);
    out += line;
    return out;
  }
};

/// Every pair is generated once per seed; means are over all (pair, seed).
template <typename S, typename T>
EvalReport evaluate(const CineGpt<S>& model, const TrajTokenizer<T>& tok, const std::vector<TextTrajPair>& pairs,
                    const std::vector<std::uint64_t>& seeds, SamplerParams sp = {}) {
  if (pairs.empty()) throw Error(ErrorCode::BadRequest, "evaluation set is empty");
  if (seeds.empty()) throw Error(ErrorCode::BadRequest, "evaluation needs at least one seed");
  EvalReport rep;
  for (const auto& p : pairs) {
    const Trajectory recon = resample(tok.reconstruct(p.traj), p.traj.size());
    const TrajectoryMse floor = trajectory_mse(recon, p.traj);
    for (std::uint64_t seed : seeds) {
      sp.seed = seed;
      const Trajectory g = resample(generate_trajectory(model, tok, p.text, sp).traj, p.traj.size());
      rep.rows.push_back(EvalRow{p.text, seed, trajectory_mse(g, p.traj), floor});
    }
  }
  const double n = static_cast<double>(rep.rows.size());
  for (const auto& r : rep.rows) {
    rep.mean.translation += r.generated.translation / n;
    rep.mean.rotation += r.generated.rotation / n;
    rep.floor.translation += r.floor.translation / n;
    rep.floor.rotation += r.floor.rotation / n;
  }
  return rep;
}

}  // namespace chatcam
