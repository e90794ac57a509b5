// keto command-line interface: tool generation, self-supervised data
// collection, training, evaluation, tool creation and SVG rendering.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>

#include "keto/creator.hpp"
#include "keto/harness.hpp"

namespace fs = std::filesystem;
using namespace keto;

namespace {

ExperimentConfig load_cfg(const std::string& config_path, std::uint64_t seed,
                          bool seed_set, bool paper_scale) {
  ExperimentConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (paper_scale) cfg.apply_paper_scale();
  if (seed_set) cfg.seed = seed;
  return cfg;
}

void cmd_gen_tools(const ExperimentConfig& cfg, const std::string& out) {
  auto train = make_split("train", cfg.tools_per_category, cfg.seed);
  auto test = make_split("test", cfg.eval_tools_per_category, cfg.seed);
  write_split(out + "/tools/train", train, cfg.cloud_points, cfg.noise_sd);
  write_split(out + "/tools/test", test, cfg.cloud_points, cfg.noise_sd);
  std::printf("wrote %zu train and %zu test tools under %s/tools\n",
              train.tools.size(), test.tools.size(), out.c_str());
}

LoopConfig loop_config_for(const ExperimentConfig& cfg, TaskKind task,
                           std::vector<ToolSpec> tools,
                           const std::string& out_dir) {
  LoopConfig lc;
  lc.task = task;
  lc.rounds = cfg.rounds;
  lc.episodes_per_round = cfg.episodes_per_round;
  lc.p_heuristic = cfg.p_heuristic;
  lc.tools = std::move(tools);
  lc.cloud_points = cfg.cloud_points;
  lc.noise_sd = cfg.noise_sd;
  lc.proposals_b = cfg.proposals;
  lc.train_hyper = cfg.train;
  lc.seed = mix_seed(cfg.seed, 0x1000 + static_cast<int>(task));
  lc.out_dir = out_dir;
  lc.threads = cfg.resolve_threads();
  return lc;
}

std::vector<ToolSpec> load_or_make_split(const ExperimentConfig& cfg,
                                         const std::string& out,
                                         const std::string& name,
                                         int per_category) {
  std::string path = out + "/tools/" + name + "/tools.jsonl";
  if (fs::exists(path)) return load_toolspecs(path);
  auto split = make_split(name, per_category, cfg.seed);
  write_split(out + "/tools/" + name, split, cfg.cloud_points, cfg.noise_sd);
  return split.tools;
}

void cmd_collect(const ExperimentConfig& cfg, const std::string& out) {
  auto tools = load_or_make_split(cfg, out, "train", cfg.tools_per_category);
  for (TaskKind task : cfg.tasks) {
    std::string dir = out + "/" + to_string(task);
    std::printf("collecting %s (%d rounds x %d episodes)...\n",
                to_string(task).c_str(), cfg.rounds, cfg.episodes_per_round);
    auto lc = loop_config_for(cfg, task, tools, dir);
    auto result = run_loop(lc);
    for (std::size_t r = 0; r < result.round_success.size(); ++r) {
      std::printf("  round %zu success rate %.3f\n", r,
                  result.round_success[r]);
    }
  }
}

LoopResult load_loop_result(const std::string& dir) {
  LoopResult loop;
  loop.records = load_records(dir + "/records.jsonl");
  loop.clouds = load_clouds(dir + "/clouds.keto");
  loop.models.proposal = load_model(dir + "/proposal.ketm");
  loop.models.evaluation = load_model(dir + "/evaluation.ketm");
  loop.models.ready = true;
  return loop;
}

void cmd_train(const ExperimentConfig& cfg, const std::string& records_dir,
               const std::string& out) {
  auto records = load_records(records_dir + "/records.jsonl");
  auto clouds = load_clouds(records_dir + "/clouds.keto");
  TrainBatch batch = batch_from_records(
      records, clouds, [](const EpisodeRecord&) { return true; });
  Hyper h = cfg.train;
  h.seed = mix_seed(cfg.seed, 0x7E1ull);
  auto prop = train_proposal(batch, h);
  h.seed = mix_seed(cfg.seed, 0x7E2ull);
  auto ev = train_evaluation(batch, h);
  fs::create_directories(out);
  save_model(out + "/proposal.ketm", prop.params);
  save_model(out + "/evaluation.ketm", ev.params);
  std::printf("trained on %zu tuples; final losses %.4f / %.4f\n",
              batch.size(), prop.loss.empty() ? 0.0 : prop.loss.back(),
              ev.loss.empty() ? 0.0 : ev.loss.back());
}

void cmd_eval(const ExperimentConfig& cfg, const std::string& out) {
  auto test_tools =
      load_or_make_split(cfg, out, "test", cfg.eval_tools_per_category);
  EvalReport report;
  for (TaskKind task : cfg.tasks) {
    std::string dir = out + "/" + to_string(task);
    if (!fs::exists(dir + "/records.jsonl")) {
      fail("missing-artifact", "no collected dataset under " + dir);
    }
    auto loop = load_loop_result(dir);
    loop.models.proposals_b = cfg.proposals;
    auto art = build_task_artifacts(task, loop, cfg.train, cfg.proposals,
                                    mix_seed(cfg.seed, 0xA7));
    std::vector<EpisodeRecord> eval_records;
    std::vector<PointCloud> eval_clouds;
    std::uint64_t eval_seed = mix_seed(cfg.seed, 0xEE);

    auto add = [&](std::vector<EvalRow> rows) {
      for (auto& r : rows) report.rows.push_back(std::move(r));
    };
    PolicyModels none;
    add(eval_method("heuristic", "all", task, test_tools, none, nullptr,
                    cfg.cloud_points, cfg.noise_sd, eval_seed, &eval_records,
                    &eval_clouds));
    add(eval_method("learned", "all", task, test_tools, art.all, nullptr,
                    cfg.cloud_points, cfg.noise_sd, eval_seed, &eval_records,
                    &eval_clouds));
    add(eval_method("template", "all", task, test_tools, none, &art.lib_all,
                    cfg.cloud_points, cfg.noise_sd, eval_seed, &eval_records,
                    &eval_clouds));
    if (art.hammer_only.ready) {
      add(eval_method("learned", "hammer", task, test_tools, art.hammer_only,
                      nullptr, cfg.cloud_points, cfg.noise_sd, eval_seed));
    }
    if (art.nonhammer_only.ready) {
      add(eval_method("learned", "non-hammer", task, test_tools,
                      art.nonhammer_only, nullptr, cfg.cloud_points,
                      cfg.noise_sd, eval_seed));
    }
    if (art.lib_hammer.size() > 0) {
      add(eval_method("template", "hammer", task, test_tools, none,
                      &art.lib_hammer, cfg.cloud_points, cfg.noise_sd,
                      eval_seed));
    }
    if (art.lib_nonhammer.size() > 0) {
      add(eval_method("template", "non-hammer", task, test_tools, none,
                      &art.lib_nonhammer, cfg.cloud_points, cfg.noise_sd,
                      eval_seed));
    }

    fs::create_directories(out + "/eval/" + to_string(task));
    std::string rec_text;
    for (const auto& r : eval_records) {
      rec_text += keto::detail::record_to_json(r).dump() + "\n";
    }
    keto::detail::write_file_bytes(
        out + "/eval/" + to_string(task) + "/records.jsonl", rec_text);
    save_clouds(out + "/eval/" + to_string(task) + "/clouds.keto", eval_clouds);
  }
  keto::detail::write_file_bytes(out + "/report.csv", report.csv());
  std::printf("%s", report.csv().c_str());
}

void cmd_create(const ExperimentConfig& cfg, const std::string& model_path,
                const std::string& keypoints_text, const std::string& out) {
  NetParams eval_params = load_model(model_path);

  // Two random parts rendered as clouds.
  Rng rng(mix_seed(cfg.seed, 0xC4EA7Eull));
  std::vector<PointCloud> parts;
  std::vector<ToolSpec> part_specs;
  for (int i = 0; i < 2; ++i) {
    ToolSpec s;
    s.id = "part-" + std::to_string(i);
    s.category = ToolCategory::non_hammer;
    ToolPart p;
    p.shape = i == 0 ? PartShape::box : (rng.bernoulli(0.5) ? PartShape::box
                                                            : PartShape::disk);
    if (p.shape == PartShape::disk) {
      p.length = p.width = rng.uniform(0.04, 0.07);
    } else {
      p.length = rng.uniform(0.1, 0.2);
      p.width = rng.uniform(0.015, 0.03);
    }
    p.height = 0.02;
    s.parts = {p};
    part_specs.push_back(s);
    parts.push_back(render_cloud(s, 256, 0.0, mix_seed(cfg.seed, 100 + i)));
  }

  // Desired keypoints in the canonical frame; default: grasp far down the
  // major axis, function at the far end, effect perpendicular.
  ToolKeypoints desired;
  if (!keypoints_text.empty()) {
    desired = parse_keypoints(keypoints_text);
  } else {
    desired.x_g = {-0.6, 0.0};
    desired.x_f = {0.85, 0.2};
    desired.x_e = {0.85, 8.0};
  }

  std::vector<PartPose> init{{-0.06, 0.0, 0.0}, {0.08, 0.05, 0.0}};
  CreationOptions opts;
  auto result = create_tool(parts, desired, eval_params, opts, init);

  fs::create_directories(out);
  // Final part placements in the toolgen line format.
  std::vector<ToolSpec> placed = part_specs;
  for (std::size_t i = 0; i < placed.size(); ++i) {
    placed[i].parts[0].pose = PlanarPose::make(
        result.poses[i].tx, result.poses[i].ty, result.poses[i].phi);
  }
  save_toolspecs(out + "/created_tool.jsonl", placed);

  // One SVG frame per accepted step.
  for (std::size_t f = 0; f < result.pose_history.size(); ++f) {
    PointCloud frame_cloud = assemble(parts, result.pose_history[f]);
    char name[160];
    std::snprintf(name, sizeof(name), "%s/frame_%03zu.svg", out.c_str(), f);
    keto::detail::write_file_bytes(name,
                                   render_svg(frame_cloud, nullptr, nullptr));
  }
  std::printf("creation: %zu accepted steps, score %.4f -> %.4f%s\n",
              result.pose_history.size(), result.score_trajectory.front(),
              result.score_trajectory.back(),
              result.converged ? " (converged)" : "");
}

void cmd_render(const std::string& clouds_path, std::size_t index,
                const std::string& keypoints_text, const std::string& env_text,
                const std::string& out_path) {
  auto clouds = load_clouds(clouds_path);
  if (index >= clouds.size()) {
    fail("bad-config", "cloud index out of range");
  }
  ToolKeypoints k;
  ToolKeypoints* kp = nullptr;
  if (!keypoints_text.empty()) {
    k = parse_keypoints(keypoints_text);
    kp = &k;
  }
  EnvKeypoints env;
  EnvKeypoints* ep = nullptr;
  if (!env_text.empty()) {
    double v[4];
    if (std::sscanf(env_text.c_str(), "%lf,%lf,%lf,%lf", &v[0], &v[1], &v[2],
                    &v[3]) != 4) {
      fail("parse-error", "expected target.x,target.y,receiver.x,receiver.y");
    }
    env.target = {v[0], v[1]};
    env.receiver = {v[2], v[3]};
    ep = &env;
  }
  keto::detail::write_file_bytes(out_path, render_svg(clouds[index], kp, ep));
  std::printf("wrote %s\n", out_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keto: keypoint-driven tool manipulation lab"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir = "out";
  std::uint64_t seed = 0;
  bool paper_scale = false;
  app.add_option("--config", config_path, "config file (key = value)");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--paper-scale", paper_scale,
               "use the full-scale protocol sizes");
  auto* seed_opt = app.add_option("--seed", seed, "base seed");

  auto* gen = app.add_subcommand("gen-tools", "generate tool splits");
  auto* collect =
      app.add_subcommand("collect", "run the self-supervision loop");
  auto* train = app.add_subcommand("train", "retrain heads from a dataset");
  std::string records_dir;
  train->add_option("--records", records_dir, "dataset directory")->required();
  auto* eval = app.add_subcommand("eval", "evaluate methods on the test split");
  auto* create = app.add_subcommand("create", "compose a tool from parts");
  std::string model_path, keypoints_text;
  create->add_option("--model", model_path, "evaluation model file")
      ->required();
  create->add_option("--keypoints", keypoints_text,
                     "desired canonical keypoints (6 comma-separated floats)");
  auto* render = app.add_subcommand("render", "render a cloud to SVG");
  std::string clouds_path, render_kp, env_text, render_out = "render.svg";
  std::size_t cloud_index = 0;
  render->add_option("--clouds", clouds_path, "KETO cloud file")->required();
  render->add_option("--index", cloud_index, "cloud ordinal");
  render->add_option("--keypoints", render_kp,
                     "keypoints (6 comma-separated floats)");
  render->add_option("--env", env_text,
                     "environment points tx,ty,rx,ry (draws the force arrow)");
  render->add_option("--svg", render_out, "output SVG path");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg =
        load_cfg(config_path, seed, seed_opt->count() > 0, paper_scale);
    if (gen->parsed()) {
      cmd_gen_tools(cfg, out_dir);
    } else if (collect->parsed()) {
      cmd_collect(cfg, out_dir);
    } else if (train->parsed()) {
      cmd_train(cfg, records_dir, out_dir);
    } else if (eval->parsed()) {
      cmd_eval(cfg, out_dir);
    } else if (create->parsed()) {
      cmd_create(cfg, model_path, keypoints_text, out_dir);
    } else if (render->parsed()) {
      cmd_render(clouds_path, cloud_index, render_kp, env_text, render_out);
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.code() == "io-error" ? 3 : 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
