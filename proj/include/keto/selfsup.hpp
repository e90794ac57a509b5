// keto - keypoint-driven tool manipulation lab
//
// Self-supervision loop: runs episodes with the heuristic policy to
// bootstrap, mixes in the learned policy on a schedule, labels outcomes
// with the simulator, accumulates (cloud, keypoints, success) tuples and
// retrains both heads each round. Every failure mode of the pipeline is a
// labeled negative, not a crash.

#ifndef KETO_SELFSUP_HPP
#define KETO_SELFSUP_HPP

#include <atomic>
#include <filesystem>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "keto/creator.hpp"
#include "keto/learner.hpp"
#include "keto/simulator.hpp"
#include "keto/toolgen.hpp"

namespace keto {

enum class PolicyKind { heuristic, learned, mixed };

inline std::string to_string(PolicyKind p) {
  switch (p) {
    case PolicyKind::heuristic: return "heuristic";
    case PolicyKind::learned: return "learned";
    case PolicyKind::mixed: return "mixed";
  }
  return "heuristic";
}

/// One labeled interaction. `cloud_ordinal` points into the KETO sidecar;
/// replaying the stored inputs through the simulator reproduces `success`.
struct EpisodeRecord {
  std::uint64_t episode_id = 0;
  TaskKind task = TaskKind::hammering;
  std::string tool_id;
  std::uint64_t seed = 0;
  std::size_t cloud_ordinal = 0;
  ToolKeypoints keypoints;
  GraspPose grasp;
  ManipAction action;
  bool success = false;
  std::string policy = "heuristic";
  std::string diagnostics;
};

/// Models handed to the episode runner (empty until round 0 trains them).
struct PolicyModels {
  NetParams proposal;
  NetParams evaluation;
  bool ready = false;
  std::size_t proposals_b = 64;
};

inline WorkspaceBox scene_workspace(const TaskScene& scene) {
  return {scene.env.target.x - 0.5, scene.env.target.x + 0.5,
          scene.env.target.y - 0.5, scene.env.target.y + 0.5};
}

/// Runs one episode end to end: keypoints via the policy, grasp selection,
/// QP, pose recovery and execution. Optimizer and grasp failures become
/// success=false records with the error code in `diagnostics`.
/// `forced_keypoints` bypasses the policy (test hook for the validity
/// gate).
inline EpisodeRecord run_episode(const TaskScene& scene,
                                 const PointCloud& observed_cloud,
                                 PolicyKind policy, const PolicyModels& models,
                                 std::uint64_t seed,
                                 const ToolKeypoints* forced_keypoints = nullptr) {
  EpisodeRecord rec;
  rec.task = scene.kind;
  rec.seed = scene.seed;
  rec.policy = to_string(policy);

  auto negative = [&rec](const std::string& diag) {
    rec.success = false;
    rec.diagnostics = diag;
    return rec;
  };

  ToolKeypoints k;
  try {
    if (forced_keypoints) {
      k = *forced_keypoints;
    } else if (policy == PolicyKind::learned) {
      if (!models.ready) return negative("no-model");
      k = predict_keypoints(observed_cloud, models.proposals_b,
                            mix_seed(seed, 0x4B5053ull), models.proposal,
                            models.evaluation);
    } else {
      k = heuristic_keypoints(observed_cloud, scene.kind,
                              mix_seed(seed, 0x4B5053ull));
    }
  } catch (const Error& e) {
    return negative(e.code());
  }
  rec.keypoints = k;
  if (!validate_keypoints(k, observed_cloud)) {
    return negative("invalid-keypoints");
  }

  auto candidates = sample_grasp_candidates(observed_cloud, 64,
                                            mix_seed(seed, 0x475250ull));
  if (candidates.empty()) return negative("no-grasp");
  GraspPose grasp;
  ManipAction action;
  try {
    grasp = select_grasp(candidates, k);
    auto qp = build_qp(k, scene.env, scene_workspace(scene));
    auto sol = solve_qp(qp);
    PlanarPose observed{grasp.position.x, grasp.position.y,
                        std::atan2(k.x_f.y - k.x_g.y, k.x_f.x - k.x_g.x)};
    action = recover_action(sol, k, observed, scene.threshold);
  } catch (const Error& e) {
    return negative(e.code());
  }
  rec.grasp = grasp;
  rec.action = action;

  auto outcome = execute(scene, observed_cloud, grasp, action);
  rec.success = outcome.success;
  rec.diagnostics = outcome.diagnostics;
  return rec;
}

/// True when the record failed before reaching the simulator (no stored
/// grasp/action to replay).
inline bool pre_execution_failure(const EpisodeRecord& rec) {
  return rec.diagnostics == "no-model" || rec.diagnostics == "no-grasp" ||
         rec.diagnostics == "invalid-keypoints" ||
         rec.diagnostics == "proposal-collapse" ||
         rec.diagnostics == "degenerate-input" ||
         rec.diagnostics == "degenerate-orientation" ||
         rec.diagnostics == "infeasible-constraints" ||
         rec.diagnostics == "solver-stalled";
}

/// Re-runs a stored record through the simulator and reports whether the
/// stored success bit is reproduced.
inline bool replay_record(const EpisodeRecord& rec, const PointCloud& cloud) {
  if (pre_execution_failure(rec)) return rec.success == false;
  TaskScene scene = make_task(rec.task, rec.seed);
  ManipAction action = rec.action;
  action.theta_obs = std::atan2(rec.keypoints.x_f.y - rec.keypoints.x_g.y,
                                rec.keypoints.x_f.x - rec.keypoints.x_g.x);
  auto outcome = execute(scene, cloud, rec.grasp, action);
  return outcome.success == rec.success;
}

// ---------------------------------------------------------------------------
// Loop
// ---------------------------------------------------------------------------

struct LoopConfig {
  TaskKind task = TaskKind::hammering;
  int rounds = 3;
  int episodes_per_round = 1000;
  std::vector<double> p_heuristic = {1.0, 0.3, 0.0};  // non-increasing
  std::vector<ToolSpec> tools;
  std::size_t cloud_points = 1024;
  double noise_sd = 0.001;
  std::size_t proposals_b = 64;
  Hyper train_hyper;
  std::uint64_t seed = 0;
  std::string out_dir;  // empty: no files written
  int threads = 1;
};

struct LoopResult {
  PolicyModels models;
  std::vector<double> round_success;
  std::vector<EpisodeRecord> records;
  std::vector<PointCloud> clouds;  // f32-quantized observations
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline nlohmann::json record_to_json(const EpisodeRecord& r) {
  return nlohmann::json{
      {"episode_id", r.episode_id},
      {"task", to_string(r.task)},
      {"tool_id", r.tool_id},
      {"seed", r.seed},
      {"cloud", r.cloud_ordinal},
      {"keypoints",
       {r.keypoints.x_g.x, r.keypoints.x_g.y, r.keypoints.x_f.x,
        r.keypoints.x_f.y, r.keypoints.x_e.x, r.keypoints.x_e.y}},
      {"grasp", {r.grasp.position.x, r.grasp.position.y, r.grasp.theta}},
      {"action",
       {r.action.x_T.x, r.action.x_T.y, r.action.theta_T, r.action.drive}},
      {"success", r.success ? 1 : 0},
      {"policy", r.policy},
      {"diag", r.diagnostics}};
}

inline EpisodeRecord record_from_json(const nlohmann::json& j) {
  EpisodeRecord r;
  r.episode_id = j.at("episode_id").get<std::uint64_t>();
  r.task = task_from_string(j.at("task").get<std::string>());
  r.tool_id = j.at("tool_id").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.cloud_ordinal = j.at("cloud").get<std::size_t>();
  auto kp = j.at("keypoints");
  r.keypoints.x_g = {kp.at(0).get<double>(), kp.at(1).get<double>()};
  r.keypoints.x_f = {kp.at(2).get<double>(), kp.at(3).get<double>()};
  r.keypoints.x_e = {kp.at(4).get<double>(), kp.at(5).get<double>()};
  auto g = j.at("grasp");
  r.grasp.position = {g.at(0).get<double>(), g.at(1).get<double>()};
  r.grasp.theta = g.at(2).get<double>();
  auto a = j.at("action");
  r.action.x_T = {a.at(0).get<double>(), a.at(1).get<double>()};
  r.action.theta_T = a.at(2).get<double>();
  r.action.drive = a.at(3).get<double>();
  r.action.theta_obs = std::atan2(r.keypoints.x_f.y - r.keypoints.x_g.y,
                                  r.keypoints.x_f.x - r.keypoints.x_g.x);
  r.success = j.at("success").get<int>() == 1;
  r.policy = j.at("policy").get<std::string>();
  r.diagnostics = j.at("diag").get<std::string>();
  return r;
}

/// Deterministic parallel map: results land in slot order regardless of
/// scheduling.
template <typename Fn>
void parallel_for(std::size_t count, int threads, Fn&& fn) {
  if (threads <= 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  int spawn = std::min<int>(threads, static_cast<int>(count));
  pool.reserve(spawn);
  for (int t = 0; t < spawn; ++t) {
    pool.emplace_back([&]() {
      for (;;) {
        std::size_t i = next.fetch_add(1);
        if (i >= count) break;
        fn(i);
      }
    });
  }
  for (auto& th : pool) th.join();
}

}  // namespace detail

/// Builds the normalized training set from records + their clouds.
/// `keep` filters records (e.g. by tool category); pre-execution failures
/// with no keypoints recorded are skipped.
template <typename Keep>
TrainBatch batch_from_records(const std::vector<EpisodeRecord>& records,
                              const std::vector<PointCloud>& clouds,
                              Keep&& keep) {
  TrainBatch batch;
  for (const auto& r : records) {
    if (!keep(r)) continue;
    if (r.diagnostics == "no-model" || r.diagnostics == "proposal-collapse" ||
        r.diagnostics == "degenerate-input") {
      continue;  // nothing meaningful recorded
    }
    batch.append(clouds[r.cloud_ordinal], r.keypoints, r.success ? 1 : 0);
  }
  return batch;
}

inline void write_dataset(const std::string& dir,
                          const std::vector<EpisodeRecord>& records,
                          const std::vector<PointCloud>& clouds,
                          const std::vector<std::string>& config_echo,
                          const std::vector<double>& round_success) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  std::string records_text;
  for (const auto& r : records) {
    records_text += detail::record_to_json(r).dump();
    records_text += "\n";
  }
  detail::write_file_bytes(dir + "/records.jsonl", records_text);

  std::string cloud_bytes = encode_clouds(clouds);
  detail::write_file_bytes(dir + "/clouds.keto", cloud_bytes);

  std::string report;
  for (std::size_t r = 0; r < round_success.size(); ++r) {
    char line[96];
    std::snprintf(line, sizeof(line), "round %zu success_rate %.6f\n", r,
                  round_success[r]);
    report += line;
  }
  detail::write_file_bytes(dir + "/report.txt", report);

  std::string manifest;
  for (const auto& line : config_echo) manifest += line + "\n";
  char h[64];
  std::snprintf(h, sizeof(h), "hash records.jsonl fnv1a64=%016llx\n",
                static_cast<unsigned long long>(detail::fnv1a64(records_text)));
  manifest += h;
  std::snprintf(h, sizeof(h), "hash clouds.keto fnv1a64=%016llx\n",
                static_cast<unsigned long long>(detail::fnv1a64(cloud_bytes)));
  manifest += h;
  detail::write_file_bytes(dir + "/manifest.txt", manifest);
}

inline std::vector<EpisodeRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail("io-error", "cannot open " + path);
  std::vector<EpisodeRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    records.push_back(detail::record_from_json(nlohmann::json::parse(line)));
  }
  return records;
}

/// The full self-supervision loop. Round 0 is heuristic-only bootstrap;
/// later rounds mix in the learned policy per the schedule and retrain
/// both heads on the cumulative dataset after every round.
inline LoopResult run_loop(const LoopConfig& cfg) {
  if (cfg.tools.empty()) fail("bad-config", "loop needs a tool split");
  if (static_cast<int>(cfg.p_heuristic.size()) < cfg.rounds) {
    fail("bad-config", "p_heuristic schedule shorter than rounds");
  }

  LoopResult result;
  result.models.proposals_b = cfg.proposals_b;
  result.records.reserve(
      static_cast<std::size_t>(cfg.rounds) * cfg.episodes_per_round);

  for (int round = 0; round < cfg.rounds; ++round) {
    double p_heur = round == 0 ? 1.0 : cfg.p_heuristic[round];
    std::uint64_t round_seed = mix_seed(cfg.seed, 0xA0 + round);
    const std::size_t base = result.records.size();
    std::vector<EpisodeRecord> round_records(cfg.episodes_per_round);
    std::vector<PointCloud> round_clouds(cfg.episodes_per_round);

    detail::parallel_for(
        cfg.episodes_per_round, cfg.threads, [&](std::size_t e) {
          std::uint64_t ep_seed = mix_seed(round_seed, e);
          Rng rng(ep_seed);
          const ToolSpec& tool = cfg.tools[rng.uniform_int(cfg.tools.size())];
          TaskScene scene = make_task(cfg.task, mix_seed(ep_seed, 0x5Cull));
          PointCloud base_cloud =
              render_cloud(tool, cfg.cloud_points, cfg.noise_sd,
                           mix_seed(ep_seed, 0xC1ull));
          PointCloud observed = quantize_f32(transform_cloud(
              base_cloud,
              PlanarPose{scene.tool_start.x, scene.tool_start.y,
                         scene.tool_start.theta},
              {0.0, 0.0}));
          PolicyKind policy = rng.bernoulli(p_heur) ? PolicyKind::heuristic
                                                    : PolicyKind::learned;
          EpisodeRecord rec =
              run_episode(scene, observed, policy, result.models, ep_seed);
          rec.tool_id = tool.id;
          round_records[e] = std::move(rec);
          round_clouds[e] = std::move(observed);
        });

    std::size_t successes = 0;
    for (std::size_t e = 0; e < round_records.size(); ++e) {
      round_records[e].episode_id = base + e;
      round_records[e].cloud_ordinal = base + e;
      if (round_records[e].success) ++successes;
      result.records.push_back(std::move(round_records[e]));
      result.clouds.push_back(std::move(round_clouds[e]));
    }
    result.round_success.push_back(
        static_cast<double>(successes) /
        std::max<std::size_t>(1, cfg.episodes_per_round));

    // Retrain on the cumulative dataset.
    TrainBatch batch = batch_from_records(result.records, result.clouds,
                                          [](const EpisodeRecord&) { return true; });
    bool any_positive = false;
    for (int l : batch.labels) any_positive |= (l == 1);
    if (!any_positive) {
      fail("bootstrap-failed",
           "no positive episodes after round " + std::to_string(round));
    }
    Hyper h = cfg.train_hyper;
    h.seed = mix_seed(cfg.seed, 0xE0 + round);
    result.models.proposal = train_proposal(batch, h).params;
    h.seed = mix_seed(cfg.seed, 0xF0 + round);
    result.models.evaluation = train_evaluation(batch, h).params;
    result.models.ready = true;
  }

  if (!cfg.out_dir.empty()) {
    std::vector<std::string> echo = {
        "task = " + to_string(cfg.task),
        "rounds = " + std::to_string(cfg.rounds),
        "episodes_per_round = " + std::to_string(cfg.episodes_per_round),
        "cloud_points = " + std::to_string(cfg.cloud_points),
        "proposals_b = " + std::to_string(cfg.proposals_b),
        "seed = " + std::to_string(cfg.seed),
        "tools = " + std::to_string(cfg.tools.size())};
    write_dataset(cfg.out_dir, result.records, result.clouds, echo,
                  result.round_success);
    save_model(cfg.out_dir + "/proposal.ketm", result.models.proposal);
    save_model(cfg.out_dir + "/evaluation.ketm", result.models.evaluation);
  }
  return result;
}

}  // namespace keto

#endif  // KETO_SELFSUP_HPP
