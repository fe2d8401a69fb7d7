#include <CLI11.hpp>

#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "chatcam/anchor.hpp"
#include "chatcam/cinegpt.hpp"
#include "chatcam/compose.hpp"
#include "chatcam/dataset.hpp"
#include "chatcam/eval.hpp"
#include "chatcam/pipeline.hpp"
#include "chatcam/remote.hpp"
#include "chatcam/service.hpp"
#include "chatcam/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace chatcam;

namespace {

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::FormatError, path + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text << "\n";
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << text << "\n";
}

std::vector<Trajectory> trajectories(const std::vector<TextTrajPair>& pairs) {
  std::vector<Trajectory> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) out.push_back(p.traj);
  return out;
}

struct SamplerArgs {
  std::string mode = "greedy";
  double temperature = 1.0;
  int top_k = 20;
  double top_p = 0.9;

  void add(CLI::App* app) {
    app->add_option("--sampler", mode, "greedy, top_k or nucleus")->capture_default_str();
    app->add_option("--temperature", temperature)->capture_default_str();
    app->add_option("--top-k", top_k)->capture_default_str();
    app->add_option("--top-p", top_p)->capture_default_str();
  }

  SamplerParams params() const {
    SamplerParams sp;
    sp.mode = sampler_mode_from(mode);
    sp.temperature = temperature;
    sp.top_k = top_k;
    sp.top_p = top_p;
    sp.check();
    return sp;
  }
};

httplib::Server* g_server = nullptr;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-driven camera trajectories: data, training, generation and serving"};
  app.set_config("--config", "", "TOML/INI file with option defaults");
  std::uint64_t seed = 0;
  std::string model_dir = "models";
  app.add_option("--seed", seed, "random seed")->capture_default_str();
  app.add_option("--model-dir", model_dir, "directory holding tokenizer.ckpt and cinegpt.ckpt")->capture_default_str();
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic text/trajectory corpus as JSONL");
  std::size_t gen_n = 1000;
  std::string gen_out;
  GenConfig gen_cfg;
  gen->add_option("--n", gen_n, "number of pairs")->capture_default_str();
  gen->add_option("--out", gen_out, "output JSONL")->required();
  gen->add_option("--frames", gen_cfg.frames)->capture_default_str();
  gen->add_option("--min-primitives", gen_cfg.min_primitives)->capture_default_str();
  gen->add_option("--max-primitives", gen_cfg.max_primitives)->capture_default_str();

  // train-tokenizer
  auto* ttok = app.add_subcommand("train-tokenizer", "train the trajectory VQ-VAE");
  std::string ttok_data, ttok_out;
  TokenizerConfig ttok_cfg;
  TokenizerTrainConfig ttok_train;
  ttok->add_option("--data", ttok_data, "training JSONL")->required();
  ttok->add_option("--out", ttok_out, "checkpoint path (default <model-dir>/tokenizer.ckpt)");
  ttok->add_option("--steps", ttok_train.steps)->capture_default_str();
  ttok->add_option("--batch", ttok_train.batch_size)->capture_default_str();
  ttok->add_option("--lr", ttok_train.lr)->capture_default_str();
  ttok->add_option("--frames", ttok_cfg.frames)->capture_default_str();
  ttok->add_option("--hidden", ttok_cfg.hidden)->capture_default_str();
  ttok->add_option("--latent-dim", ttok_cfg.latent_dim)->capture_default_str();
  ttok->add_option("--codebook", ttok_cfg.codebook_size)->capture_default_str();

  // train-gpt
  auto* tgpt = app.add_subcommand("train-gpt", "train CineGPT (stage 1: language modelling, stage 2: translation)");
  int stage = 1;
  std::string tgpt_data, tgpt_tok, tgpt_out, tgpt_init, profile = "reduced";
  GptTrainConfig tgpt_cfg;
  double dropout = -1.0;
  tgpt->add_option("--stage", stage)->check(CLI::IsMember({1, 2}))->capture_default_str();
  tgpt->add_option("--data", tgpt_data, "training JSONL")->required();
  tgpt->add_option("--tokenizer", tgpt_tok, "tokenizer checkpoint (default <model-dir>/tokenizer.ckpt)");
  tgpt->add_option("--out", tgpt_out, "checkpoint path (default <model-dir>/cinegpt.ckpt)");
  tgpt->add_option("--init", tgpt_init, "continue from this checkpoint (stage 2 default: --out)");
  tgpt->add_option("--profile", profile, "reduced or paper")->check(CLI::IsMember({"reduced", "paper"}))->capture_default_str();
  tgpt->add_option("--dropout", dropout, "override the profile's dropout");
  tgpt->add_option("--steps", tgpt_cfg.steps)->capture_default_str();
  tgpt->add_option("--batch", tgpt_cfg.batch_size)->capture_default_str();
  tgpt->add_option("--lr", tgpt_cfg.lr)->capture_default_str();
  tgpt->add_option("--warmup", tgpt_cfg.warmup_steps)->capture_default_str();
  tgpt->add_option("--paraphrase-prob", tgpt_cfg.paraphrase_prob)->capture_default_str();
  tgpt->add_option("--word-dropout", tgpt_cfg.word_dropout)->capture_default_str();

  // generate
  auto* genr = app.add_subcommand("generate", "run the full pipeline on a prompt");
  std::string prompt, gen_traj_out = "-", scene_path, export_path, trace_out, model_override;
  SamplerArgs gen_sampler;
  bool no_refine = false;
  genr->add_option("--prompt", prompt)->required();
  genr->add_option("--out", gen_traj_out, "trajectory JSON ('-' for stdout)")->capture_default_str();
  genr->add_option("--model", model_override, "model directory (overrides --model-dir)");
  genr->add_option("--scene", scene_path, "scene manifest for anchors");
  genr->add_option("--export", export_path, "also write a camera-path file");
  genr->add_option("--trace", trace_out, "plan and trace JSON (default <out>.trace.json)");
  genr->add_flag("--no-refine", no_refine, "use the selected scene image's camera as is");
  gen_sampler.add(genr);

  // compose
  auto* comp = app.add_subcommand("compose", "place and join atomic trajectories through anchor poses");
  std::string comp_plan, comp_query, comp_anchors, comp_out = "-";
  std::vector<std::string> comp_trajs;
  auto* plan_opt = comp->add_option("--plan", comp_plan, "plan JSON");
  comp->add_option("--query", comp_query, "plan this query with the grammar planner instead")->excludes(plan_opt);
  comp->add_option("--traj", comp_trajs, "atomic trajectory JSON, one per atomic step in order")->required();
  comp->add_option("--anchors", comp_anchors, "JSON object: plan step index -> camera frame");
  comp->add_option("--out", comp_out)->capture_default_str();

  // eval
  auto* ev = app.add_subcommand("eval", "translation/rotation MSE of generated trajectories on held-out pairs");
  std::string ev_data, ev_json;
  std::vector<std::uint64_t> ev_seeds{0};
  SamplerArgs ev_sampler;
  bool ev_rows = false;
  ev->add_option("--data", ev_data, "held-out JSONL")->required();
  ev->add_option("--seeds", ev_seeds, "sampler seeds")->delimiter(',')->capture_default_str();
  ev->add_option("--json", ev_json, "machine-readable report path");
  ev->add_flag("--rows", ev_rows, "print per-pair rows");
  ev_sampler.add(ev);

  // serve
  auto* srv = app.add_subcommand("serve", "HTTP service");
  ServiceConfig scfg;
  std::string scene_dir = "scenes";
  srv->add_option("--host", scfg.host)->capture_default_str();
  srv->add_option("--port", scfg.port)->capture_default_str();
  srv->add_option("--scene-dir", scene_dir)->capture_default_str();
  srv->add_option("--embedding-dim", scfg.embedding_dim)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      save_jsonl(gen_out, generate_dataset(gen_n, seed, gen_cfg));
      std::cerr << "wrote " << gen_n << " pairs to " << gen_out << "\n";
    } else if (*ttok) {
      const auto pairs = load_jsonl(ttok_data);
      const std::string out = ttok_out.empty() ? (fs::path(model_dir) / kTokenizerFile).string() : ttok_out;
      auto res = train_tokenizer<float>(trajectories(pairs), ttok_cfg, ttok_train, seed, [](const TokenizerEpochLog& l) {
        std::cerr << json{{"epoch", l.epoch}, {"recon", l.mean.recon}, {"total", l.mean.total()}, {"codes_used", l.codes_used}}.dump()
                  << "\n";
      });
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      res.tokenizer.save(out);
      std::cerr << "codes in use: " << codes_in_use(res.tokenizer, trajectories(pairs)) << "; saved " << out << "\n";
    } else if (*tgpt) {
      const auto pairs = load_jsonl(tgpt_data);
      const auto tok = TrajTokenizer<float>::load(tgpt_tok.empty() ? (fs::path(model_dir) / kTokenizerFile).string() : tgpt_tok);
      const std::string out = tgpt_out.empty() ? (fs::path(model_dir) / kGptFile).string() : tgpt_out;
      std::string init = tgpt_init;
      if (init.empty() && stage == 2) init = out;
      GptConfig gcfg = profile == "paper" ? GptConfig::paper() : GptConfig::reduced();
      if (dropout >= 0.0) gcfg.dropout = dropout;
      CineGpt<float> model = init.empty() ? CineGpt<float>(gcfg, Vocab::standard(tok.config().codebook_size), seed)
                                          : CineGpt<float>::load(init);
      check_compatible(Models{tok, model});
      const auto data = tokenize_corpus(pairs, tok, model.vocab());
      const auto res = train_gpt(model, data, stage == 1 ? TrainStage::Pretrain : TrainStage::Translation, tgpt_cfg, seed,
                                 [](std::size_t step, double loss) {
                                   if (step % 50 == 0) std::cerr << json{{"step", step}, {"loss", loss}}.dump() << "\n";
                                 });
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      model.save(out);
      std::cerr << "final loss " << res.final_loss << "; saved " << out << "\n";
    } else if (*genr) {
      const Models models = load_models(model_override.empty() ? model_dir : model_override);
      std::optional<Scene> scene;
      if (!scene_path.empty()) scene = load_scene(scene_path);
      std::unique_ptr<EmbeddingProvider> provider;
      if (scene) {
        if (auto remote = RemoteEmbeddingProvider::from_env(scene->embedding_dim)) {
          provider = std::make_unique<RemoteEmbeddingProvider>(std::move(*remote));
        } else {
          provider = std::make_unique<SyntheticProvider>(scene->embedding_dim);
        }
      }
      const auto chat = HttpChatClient::from_env();
      PipelineOptions opts;
      opts.seed = seed;
      opts.sampler = gen_sampler.params();
      opts.refine = !no_refine;
      opts.planner = chat ? &*chat : nullptr;
      const auto r = run_pipeline(prompt, scene ? &*scene : nullptr, models, provider.get(), opts);
      for (const auto& w : r.warnings) std::cerr << "warning: " << w << "\n";
      write_text(gen_traj_out, trajectory_to_json(r.trajectory).dump(2));
      const std::string trace_path = !trace_out.empty() ? trace_out : gen_traj_out == "-" ? "" : gen_traj_out + ".trace.json";
      if (!trace_path.empty())
        write_text(trace_path, json{{"plan", plan_to_json(r.plan)}, {"trace", r.trace.to_json(true)}, {"warnings", r.warnings}}.dump(2));
      if (!export_path.empty()) write_text(export_path, camera_path_json(r.trajectory).dump(2));
    } else if (*comp) {
      if (comp_plan.empty() && comp_query.empty()) throw Error(ErrorCode::BadRequest, "give --plan or --query");
      const Plan plan = comp_plan.empty() ? parse_query(comp_query) : plan_from_json(read_json(comp_plan));
      std::vector<Trajectory> atomics;
      for (const auto& p : comp_trajs) atomics.push_back(trajectory_from_json(read_json(p)));
      AnchorPoses poses;
      if (!comp_anchors.empty()) {
        for (const auto& [k, v] : read_json(comp_anchors).items()) poses[std::stoul(k)] = frame_from_json(v);
      }
      const Composition c = compose(plan, atomics, poses);
      write_text(comp_out, trajectory_to_json(c.trajectory).dump(2));
      std::cerr << c.trace.reasoning << "\n";
    } else if (*ev) {
      const Models models = load_models(model_dir);
      const auto rep = evaluate(models.gpt, models.tokenizer, load_jsonl(ev_data), ev_seeds, ev_sampler.params());
      if (ev_rows) {
        for (const auto& r : rep.rows)
          std::printf("%10.5f %10.5f  seed %llu  %s\n", r.generated.translation, r.generated.rotation,
                      static_cast<unsigned long long>(r.seed), r.text.c_str());
      }
      std::cout << rep.table();
      if (!ev_json.empty()) write_text(ev_json, rep.to_json().dump(2));
    } else if (*srv) {
      scfg.model_dir = model_dir;
      scfg.scene_dir = scene_dir;
      scfg.default_seed = seed;
      scfg.embed_url = detail::env("CHATCAM_EMBED_URL");
      scfg.embed_key = detail::env("CHATCAM_EMBED_KEY");
      scfg.planner_url = detail::env("CHATCAM_PLANNER_URL");
      scfg.planner_model = detail::env("CHATCAM_PLANNER_MODEL");
      scfg.planner_key = detail::env("CHATCAM_PLANNER_KEY");
      std::vector<std::string> warnings;
      const Service service = Service::from_config(scfg, warnings);
      for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
      httplib::Server server;
      service.mount(server);
      g_server = &server;
      std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
      });
      std::cerr << "listening on " << scfg.host << ":" << scfg.port << " (" << service.scenes().size() << " scenes, models "
                << (service.models_loaded() ? "loaded" : "missing") << ")\n";
      if (!server.listen(scfg.host, scfg.port)) throw Error(ErrorCode::IoError, "cannot listen on port " + std::to_string(scfg.port));
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what();
    if (e.step()) std::cerr << " (plan step " << *e.step() << ")";
    std::cerr << "\n";
    return 1;
  }
  return 0;
}
