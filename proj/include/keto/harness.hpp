// keto - keypoint-driven tool manipulation lab
//
// Experiment orchestration: plain-text config with strict key checking,
// tool split generation, the desk-scale evaluation protocol (per-method
// success rates with Wilson intervals and the cross-category matrix) and
// the statistics used by the acceptance suite.

#ifndef KETO_HARNESS_HPP
#define KETO_HARNESS_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "keto/selfsup.hpp"
#include "keto/svg.hpp"

namespace keto {

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Wilson 95% score interval (z defaults to the two-sided 95% quantile).
inline std::pair<double, double> wilson_interval(std::size_t successes,
                                                 std::size_t n,
                                                 double z = 1.959963984540054) {
  if (n == 0) return {0.0, 1.0};
  double p = static_cast<double>(successes) / n;
  double z2 = z * z;
  double denom = 1.0 + z2 / n;
  double center = (p + z2 / (2.0 * n)) / denom;
  double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

/// One-sided two-proportion z-test: is rate(a) > rate(b) at p < 0.05?
inline bool two_proportion_greater(std::size_t succ_a, std::size_t n_a,
                                   std::size_t succ_b, std::size_t n_b) {
  if (n_a == 0 || n_b == 0) return false;
  double pa = static_cast<double>(succ_a) / n_a;
  double pb = static_cast<double>(succ_b) / n_b;
  double pool = static_cast<double>(succ_a + succ_b) / (n_a + n_b);
  double se = std::sqrt(pool * (1.0 - pool) * (1.0 / n_a + 1.0 / n_b));
  if (se <= 0.0) return pa > pb;
  double zstat = (pa - pb) / se;
  return zstat > 1.6448536269514722;  // one-sided 95%
}

/// The acceptance comparison: non-overlapping Wilson intervals or a
/// significant one-sided two-proportion test.
inline bool significantly_greater(std::size_t succ_a, std::size_t n_a,
                                  std::size_t succ_b, std::size_t n_b) {
  auto [alo, ahi] = wilson_interval(succ_a, n_a);
  auto [blo, bhi] = wilson_interval(succ_b, n_b);
  (void)ahi;
  (void)blo;
  if (alo > bhi) return true;
  return two_proportion_greater(succ_a, n_a, succ_b, n_b);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Full experiment configuration. Every key has a default; the config file
/// parser rejects unknown sections or keys outright.
struct ExperimentConfig {
  // [experiment]
  std::vector<TaskKind> tasks = {TaskKind::hammering, TaskKind::pushing,
                                 TaskKind::reaching};
  int tools_per_category = 50;       // training split
  int eval_tools_per_category = 50;  // held-out split
  std::size_t cloud_points = 1024;   // M
  std::size_t proposals = 64;        // B (paper scale: 256)
  double noise_sd = 0.001;
  std::uint64_t seed = 0;
  int threads = 0;  // 0: use KETO_THREADS or hardware concurrency
  std::string method = "learned";

  // [loop]
  int rounds = 3;
  int episodes_per_round = 1000;
  std::vector<double> p_heuristic = {1.0, 0.3, 0.0};

  // [training]
  Hyper train{1e-3, 32, 2000, learner_constants::kLatentDim, 0.1, 0};

  bool paper_scale = false;

  void apply_paper_scale() {
    paper_scale = true;
    tools_per_category = 300;
    eval_tools_per_category = 300;
    proposals = 256;
    episodes_per_round = 33334;  // ~100K tuples over 3 rounds
    train.iterations = 120000;
    train.batch = 128;
    train.learning_rate = 1e-4;
  }

  int resolve_threads() const {
    if (threads > 0) return threads;
    if (const char* env = std::getenv("KETO_THREADS")) {
      int t = std::atoi(env);
      if (t > 0) return t;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

}  // namespace detail

/// Parses the documented `key = value` config format with [sections].
/// Unknown sections or keys are hard errors (config drift protection).
inline ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section = "experiment";
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[' && t.back() == ']') {
      section = detail::trim(t.substr(1, t.size() - 2));
      if (section != "experiment" && section != "loop" &&
          section != "training") {
        fail("bad-config", "unknown section [" + section + "] at line " +
                               std::to_string(line_no));
      }
      continue;
    }
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      fail("bad-config",
           "expected key = value at line " + std::to_string(line_no));
    }
    std::string key = detail::trim(t.substr(0, eq));
    std::string value = detail::trim(t.substr(eq + 1));
    auto as_int = [&]() { return std::stoll(value); };
    auto as_double = [&]() { return std::stod(value); };

    if (section == "experiment") {
      if (key == "tasks") {
        cfg.tasks.clear();
        for (const auto& t2 : detail::split_list(value)) {
          cfg.tasks.push_back(task_from_string(t2));
        }
      } else if (key == "tools_per_category") {
        cfg.tools_per_category = static_cast<int>(as_int());
      } else if (key == "eval_tools_per_category") {
        cfg.eval_tools_per_category = static_cast<int>(as_int());
      } else if (key == "cloud_points") {
        cfg.cloud_points = static_cast<std::size_t>(as_int());
      } else if (key == "proposals") {
        cfg.proposals = static_cast<std::size_t>(as_int());
      } else if (key == "noise_sd") {
        cfg.noise_sd = as_double();
      } else if (key == "seed") {
        cfg.seed = static_cast<std::uint64_t>(as_int());
      } else if (key == "threads") {
        cfg.threads = static_cast<int>(as_int());
      } else if (key == "method") {
        if (value != "heuristic" && value != "template" && value != "learned") {
          fail("bad-config", "unknown method: " + value);
        }
        cfg.method = value;
      } else {
        fail("bad-config", "unknown key '" + key + "' in [experiment]");
      }
    } else if (section == "loop") {
      if (key == "rounds") {
        cfg.rounds = static_cast<int>(as_int());
      } else if (key == "episodes_per_round") {
        cfg.episodes_per_round = static_cast<int>(as_int());
      } else if (key == "p_heuristic") {
        cfg.p_heuristic.clear();
        for (const auto& v : detail::split_list(value)) {
          cfg.p_heuristic.push_back(std::stod(v));
        }
      } else {
        fail("bad-config", "unknown key '" + key + "' in [loop]");
      }
    } else {  // training
      if (key == "iterations") {
        cfg.train.iterations = static_cast<int>(as_int());
      } else if (key == "batch") {
        cfg.train.batch = static_cast<int>(as_int());
      } else if (key == "learning_rate") {
        cfg.train.learning_rate = as_double();
      } else if (key == "kl_weight") {
        cfg.train.kl_weight = as_double();
      } else if (key == "latent_dim") {
        if (as_int() != learner_constants::kLatentDim) {
          fail("bad-config", "latent_dim is fixed at 4 in this build");
        }
      } else {
        fail("bad-config", "unknown key '" + key + "' in [training]");
      }
    }
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  return parse_config_text(detail::read_file_bytes(path));
}

/// Serializes every key with its current value (the manifest echo).
inline std::string config_echo(const ExperimentConfig& cfg) {
  std::string s = "[experiment]\n";
  s += "tasks = ";
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    s += (i ? "," : "") + to_string(cfg.tasks[i]);
  }
  s += "\n";
  s += "tools_per_category = " + std::to_string(cfg.tools_per_category) + "\n";
  s += "eval_tools_per_category = " +
       std::to_string(cfg.eval_tools_per_category) + "\n";
  s += "cloud_points = " + std::to_string(cfg.cloud_points) + "\n";
  s += "proposals = " + std::to_string(cfg.proposals) + "\n";
  char num[48];
  std::snprintf(num, sizeof(num), "%.17g", cfg.noise_sd);
  s += std::string("noise_sd = ") + num + "\n";
  s += "seed = " + std::to_string(cfg.seed) + "\n";
  s += "threads = " + std::to_string(cfg.threads) + "\n";
  s += "method = " + cfg.method + "\n";
  s += "[loop]\n";
  s += "rounds = " + std::to_string(cfg.rounds) + "\n";
  s += "episodes_per_round = " + std::to_string(cfg.episodes_per_round) + "\n";
  s += "p_heuristic = ";
  for (std::size_t i = 0; i < cfg.p_heuristic.size(); ++i) {
    std::snprintf(num, sizeof(num), "%.17g", cfg.p_heuristic[i]);
    s += std::string(i ? "," : "") + num;
  }
  s += "\n[training]\n";
  s += "iterations = " + std::to_string(cfg.train.iterations) + "\n";
  s += "batch = " + std::to_string(cfg.train.batch) + "\n";
  std::snprintf(num, sizeof(num), "%.17g", cfg.train.learning_rate);
  s += std::string("learning_rate = ") + num + "\n";
  std::snprintf(num, sizeof(num), "%.17g", cfg.train.kl_weight);
  s += std::string("kl_weight = ") + num + "\n";
  s += "latent_dim = " + std::to_string(learner_constants::kLatentDim) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// Tool splits
// ---------------------------------------------------------------------------

struct ToolSplit {
  std::vector<ToolSpec> tools;  // category-balanced, deterministic ids
};

/// Deterministic category-balanced split. Train and test draws use
/// disjoint seed ranges off the same base seed.
inline ToolSplit make_split(const std::string& name, int per_category,
                            std::uint64_t base_seed) {
  ToolSplit split;
  std::uint64_t offset = name == "test" ? 1000000ull : 0ull;
  for (int i = 0; i < per_category; ++i) {
    for (auto cat : {ToolCategory::hammer, ToolCategory::non_hammer}) {
      std::uint64_t seed =
          mix_seed(base_seed, offset + static_cast<std::uint64_t>(i) * 2 +
                                  (cat == ToolCategory::hammer ? 0 : 1));
      ToolSpec spec = generate_tool(cat, seed);
      char id[64];
      std::snprintf(id, sizeof(id), "%s-%s-%03d", name.c_str(),
                    cat == ToolCategory::hammer ? "hammer" : "nonhammer", i);
      spec.id = id;
      split.tools.push_back(std::move(spec));
    }
  }
  return split;
}

/// Writes tools.jsonl + clouds.keto + index.txt for a split.
inline void write_split(const std::string& dir, const ToolSplit& split,
                        std::size_t cloud_points, double noise_sd) {
  std::filesystem::create_directories(dir);
  save_toolspecs(dir + "/tools.jsonl", split.tools);
  std::vector<PointCloud> clouds;
  std::string index;
  for (std::size_t i = 0; i < split.tools.size(); ++i) {
    const auto& t = split.tools[i];
    clouds.push_back(
        quantize_f32(render_cloud(t, cloud_points, noise_sd, t.seed)));
    index += t.id + " " + std::to_string(i) + "\n";
  }
  save_clouds(dir + "/clouds.keto", clouds);
  detail::write_file_bytes(dir + "/index.txt", index);
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string method;
  std::string task;
  std::string train_category;
  std::string test_category;
  std::size_t successes = 0;
  std::size_t episodes = 0;
  double rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 1.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;

  std::string csv() const {
    std::string s =
        "method,task,train_category,test_category,successes,episodes,rate,"
        "ci_low,ci_high\n";
    for (const auto& r : rows) {
      char line[256];
      std::snprintf(line, sizeof(line), "%s,%s,%s,%s,%zu,%zu,%.6f,%.6f,%.6f\n",
                    r.method.c_str(), r.task.c_str(), r.train_category.c_str(),
                    r.test_category.c_str(), r.successes, r.episodes, r.rate,
                    r.ci_low, r.ci_high);
      s += line;
    }
    return s;
  }

  /// Pools successes/episodes over rows matching method/task/train_cat.
  std::pair<std::size_t, std::size_t> pooled(const std::string& method,
                                             const std::string& task,
                                             const std::string& train_cat) const {
    std::size_t s = 0, n = 0;
    for (const auto& r : rows) {
      if (r.method == method && (task.empty() || r.task == task) &&
          (train_cat.empty() || r.train_category == train_cat)) {
        s += r.successes;
        n += r.episodes;
      }
    }
    return {s, n};
  }
};

/// Per-task artifacts used by the evaluation: learned heads trained on all
/// data and per-category subsets, plus template libraries from succeeded
/// episodes.
struct TaskArtifacts {
  TaskKind task = TaskKind::hammering;
  PolicyModels all;
  PolicyModels hammer_only;
  PolicyModels nonhammer_only;
  TemplateLibrary lib_all;
  TemplateLibrary lib_hammer;
  TemplateLibrary lib_nonhammer;
};

inline constexpr std::size_t kTemplateLibraryCap = 200;

/// Builds a template library from the first succeeded episodes (capped).
/// `category` filters by the episode's tool id substring ("hammer-" vs
/// "nonhammer-"); empty keeps everything.
inline void fill_template_library(TemplateLibrary& lib,
                                  const std::vector<EpisodeRecord>& records,
                                  const std::vector<PointCloud>& clouds,
                                  const std::string& category) {
  for (const auto& r : records) {
    if (lib.size() >= kTemplateLibraryCap) break;
    if (!r.success) continue;
    if (!category.empty() &&
        r.tool_id.find(category) == std::string::npos) {
      continue;
    }
    lib.add(clouds[r.cloud_ordinal], r.keypoints);
  }
}

/// Category tag used in tool ids ("-hammer-" vs "-nonhammer-").
inline std::string category_tag(ToolCategory cat) {
  return cat == ToolCategory::hammer ? "-hammer-" : "-nonhammer-";
}

/// Derives per-category retrained heads and template libraries from a
/// finished loop.
inline TaskArtifacts build_task_artifacts(TaskKind task, const LoopResult& loop,
                                          const Hyper& hyper,
                                          std::size_t proposals_b,
                                          std::uint64_t seed) {
  TaskArtifacts art;
  art.task = task;
  art.all = loop.models;
  art.all.proposals_b = proposals_b;

  auto train_subset = [&](const std::string& tag, std::uint64_t salt) {
    PolicyModels m;
    m.proposals_b = proposals_b;
    TrainBatch batch = batch_from_records(
        loop.records, loop.clouds, [&](const EpisodeRecord& r) {
          return r.tool_id.find(tag) != std::string::npos;
        });
    bool has_pos = false, has_neg = false;
    for (int l : batch.labels) (l ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) return m;  // not trainable; stays !ready
    Hyper h = hyper;
    h.seed = mix_seed(seed, salt);
    m.proposal = train_proposal(batch, h).params;
    h.seed = mix_seed(seed, salt + 1);
    m.evaluation = train_evaluation(batch, h).params;
    m.ready = true;
    return m;
  };
  art.hammer_only = train_subset("-hammer-", 0x30);
  art.nonhammer_only = train_subset("-nonhammer-", 0x40);

  fill_template_library(art.lib_all, loop.records, loop.clouds, "");
  fill_template_library(art.lib_hammer, loop.records, loop.clouds, "-hammer-");
  fill_template_library(art.lib_nonhammer, loop.records, loop.clouds,
                        "-nonhammer-");
  return art;
}

/// Evaluates one method over the test split for one task; one scene per
/// tool, deterministic in eval_seed. Returns per-test-category rows and
/// optionally appends the episode records + clouds for auditing.
inline std::vector<EvalRow> eval_method(
    const std::string& method, const std::string& train_cat, TaskKind task,
    const std::vector<ToolSpec>& test_tools, const PolicyModels& models,
    const TemplateLibrary* library, std::size_t cloud_points, double noise_sd,
    std::uint64_t eval_seed, std::vector<EpisodeRecord>* out_records = nullptr,
    std::vector<PointCloud>* out_clouds = nullptr) {
  std::map<std::string, std::pair<std::size_t, std::size_t>> cells;
  cells["hammer"] = {0, 0};
  cells["non-hammer"] = {0, 0};

  for (std::size_t ti = 0; ti < test_tools.size(); ++ti) {
    const ToolSpec& tool = test_tools[ti];
    std::uint64_t ep_seed = mix_seed(mix_seed(eval_seed, 0xEE00 + static_cast<int>(task)), ti);
    TaskScene scene = make_task(task, mix_seed(ep_seed, 0x5Cull));
    PointCloud observed = quantize_f32(transform_cloud(
        render_cloud(tool, cloud_points, noise_sd, mix_seed(ep_seed, 0xC1ull)),
        PlanarPose{scene.tool_start.x, scene.tool_start.y,
                   scene.tool_start.theta},
        {0.0, 0.0}));

    EpisodeRecord rec;
    if (method == "heuristic") {
      rec = run_episode(scene, observed, PolicyKind::heuristic, models, ep_seed);
    } else if (method == "learned") {
      rec = run_episode(scene, observed, PolicyKind::learned, models, ep_seed);
    } else {  // template
      ToolKeypoints k{};
      bool have_k = false;
      try {
        if (!library || library->size() == 0) fail("empty-library", "eval");
        k = library->predict(observed);
        have_k = true;
      } catch (const Error& e) {
        rec.task = task;
        rec.seed = scene.seed;
        rec.success = false;
        rec.diagnostics = e.code();
      }
      if (have_k) {
        rec = run_episode(scene, observed, PolicyKind::heuristic, models,
                          ep_seed, &k);
      }
      rec.policy = "template";
    }
    rec.tool_id = tool.id;
    auto& cell = cells[to_string(tool.category)];
    cell.second += 1;
    if (rec.success) cell.first += 1;
    if (out_records && out_clouds) {
      rec.episode_id = out_records->size();
      rec.cloud_ordinal = out_clouds->size();
      out_records->push_back(rec);
      out_clouds->push_back(std::move(observed));
    }
  }

  std::vector<EvalRow> rows;
  for (const auto& [cat, cell] : cells) {
    EvalRow row;
    row.method = method;
    row.task = to_string(task);
    row.train_category = train_cat;
    row.test_category = cat;
    row.successes = cell.first;
    row.episodes = cell.second;
    row.rate = cell.second ? static_cast<double>(cell.first) / cell.second : 0.0;
    auto [lo, hi] = wilson_interval(cell.first, cell.second);
    row.ci_low = lo;
    row.ci_high = hi;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace keto

#endif  // KETO_HARNESS_HPP
