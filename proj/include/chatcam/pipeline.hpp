#pragma once

// Query -> plan -> per-step tool calls -> composed trajectory.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "chatcam/anchor.hpp"
#include "chatcam/cinegpt.hpp"
#include "chatcam/compose.hpp"
#include "chatcam/planner.hpp"
#include "chatcam/tokenizer.hpp"
#include "chatcam/trajectory_json.hpp"

namespace chatcam {

struct Models {
  TrajTokenizer<float> tokenizer;
  CineGpt<float> gpt;
};

inline constexpr const char* kTokenizerFile = "tokenizer.ckpt";
inline constexpr const char* kGptFile = "cinegpt.ckpt";

/// The GPT must address exactly the tokenizer's codebook and fit a full
/// token sequence behind a short prompt.
inline void check_compatible(const Models& m) {
  const int k = m.tokenizer.config().codebook_size;
  if (m.gpt.vocab().codebook_size() != k) {
    throw Error(ErrorCode::FormatError, "CineGPT vocabulary has " + std::to_string(m.gpt.vocab().codebook_size()) +
                                            " trajectory tokens but the tokenizer codebook has " + std::to_string(k));
  }
  if (m.tokenizer.config().tokens() + 8 > m.gpt.config().context) {
    throw Error(ErrorCode::FormatError, "CineGPT context is too short for the tokenizer's sequence length");
  }
}

inline Models load_models(const std::filesystem::path& dir) {
  const auto tok_path = dir / kTokenizerFile, gpt_path = dir / kGptFile;
  for (const auto& p : {tok_path, gpt_path})
    if (!std::filesystem::exists(p)) throw Error(ErrorCode::ModelsNotLoaded, "missing checkpoint " + p.string());
  Models m{TrajTokenizer<float>::load(tok_path.string()), CineGpt<float>::load(gpt_path.string())};
  check_compatible(m);
  return m;
}

struct PipelineOptions {
  std::uint64_t seed = 0;
  SamplerParams sampler;  // its seed is replaced per atomic step
  bool refine = true;
  RefineOptions refine_options;
  const ChatClient* planner = nullptr;
};

struct PipelineResult {
  Plan plan;
  Trajectory trajectory;
  std::vector<Trajectory> atomics;         // as generated, before placement
  std::map<std::size_t, AnchorResult> anchors;  // by plan step
  std::vector<SegmentInfo> segments;
  TraceLog trace;
  std::vector<std::string> warnings;
};

inline std::uint64_t step_seed(std::uint64_t seed, std::size_t step) { return detail::splitmix64(seed + step); }

inline json anchor_result_json(const AnchorResult& r) {
  return json{{"camera", frame_to_json(r.camera)},
              {"score", r.score},
              {"source_image_id", r.source_image_id},
              {"refinement_steps", r.refinement_steps},
              {"warnings", r.warnings}};
}

/// Selects the best matching scene image and, when the provider allows it,
/// refines its camera.
inline AnchorResult determine_anchor(const Scene& scene, const EmbeddingProvider& provider, std::string_view prompt,
                                     bool refine, const RefineOptions& ro = {}) {
  AnchorResult r = select_initial_anchor(scene, provider, prompt);
  if (!refine) return r;
  if (!provider.differentiable() || scene.content.empty()) {
    r.warnings.push_back("anchor not refined: " + std::string(scene.content.empty() ? "scene has no renderable content"
                                                                                      : "embedding provider is not differentiable"));
    return r;
  }
  AnchorResult refined = refine_anchor(scene, provider, prompt, r.camera, ro);
  refined.source_image_id = r.source_image_id;
  return refined;
}

namespace detail {

inline double millis_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

/// Errors from a plan step carry that step's index. `scene` and `provider`
/// are only needed when the plan has anchors.
inline PipelineResult run_pipeline(std::string_view query, const Scene* scene, const Models& models,
                                   const EmbeddingProvider* provider, const PipelineOptions& opts = {}) {
  PipelineResult res;
  res.trace.observation = std::string(query);
  res.plan = make_plan(query, opts.planner, &res.trace);
  const Plan& plan = res.plan;

  AnchorPoses poses;
  for (std::size_t i = 0; i < plan.steps.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if (const auto* a = std::get_if<AtomicStep>(&plan.steps[i])) {
        SamplerParams sp = opts.sampler;
        sp.seed = step_seed(opts.seed, i);
        GeneratedTrajectory g = generate_trajectory(models.gpt, models.tokenizer, a->prompt, sp);
        if (a->duration_hint) g.traj.duration_s = *a->duration_hint;
        if (g.truncated) res.warnings.push_back("step " + std::to_string(i) + ": trajectory token sequence truncated");
        res.trace.calls.push_back(ToolCall{"cinegpt", i,
                                           json{{"prompt", a->prompt}, {"seed", sp.seed}, {"sampler", sampler_mode_name(sp.mode)}},
                                           json{{"tokens", g.tokens.codes}, {"duration_s", g.traj.duration_s},
                                                {"frames", g.traj.size()}, {"truncated", g.truncated}},
                                           detail::millis_since(t0)});
        res.atomics.push_back(std::move(g.traj));
      } else {
        const auto& an = std::get<AnchorStep>(plan.steps[i]);
        if (!scene) throw Error(ErrorCode::BadRequest, "anchor \"" + an.prompt + "\" needs a scene");
        if (!provider) throw Error(ErrorCode::BadRequest, "anchor \"" + an.prompt + "\" needs an embedding provider");
        AnchorResult r = determine_anchor(*scene, *provider, an.prompt, opts.refine, opts.refine_options);
        for (const auto& w : r.warnings) res.warnings.push_back("step " + std::to_string(i) + ": " + w);
        poses[i] = r.camera;
        res.trace.calls.push_back(ToolCall{"anchor", i,
                                           json{{"prompt", an.prompt}, {"role", role_name(an.role)},
                                                {"attaches_to", an.attaches_to}, {"scene_id", scene->id}},
                                           anchor_result_json(r), detail::millis_since(t0)});
        res.anchors.emplace(i, std::move(r));
      }
    } catch (const Error& e) {
      throw e.step() ? e : e.with_step(i);
    }
  }

  Composition c = compose(plan, res.atomics, poses);
  res.trajectory = std::move(c.trajectory);
  res.segments = std::move(c.segments);
  for (auto& call : c.trace.calls) res.trace.calls.push_back(std::move(call));
  res.trace.reasoning += c.trace.reasoning;
  return res;
}

}  // namespace chatcam
