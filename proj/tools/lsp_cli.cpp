// Command-line entry point for the full pipeline: demo generation, the three
// pre-training stages, task training, planning, and offline evaluation. Every
// subcommand resolves a flat JSON config (file keys over defaults, flag
// overrides over both), writes the resolved config, checkpoints, and metric
// CSVs into a run directory, and finishes with a manifest recording the seed
// and content hashes of all inputs and outputs so reruns can be compared
// bit for bit.
//
// Exit codes: 0 success, 2 bad config or arguments, 3 malformed dataset or
// checkpoint, 4 numerical failure.

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "lsp/checkpoint.hpp"
#include "lsp/common.hpp"
#include "lsp/dataset.hpp"
#include "lsp/highlevel.hpp"
#include "lsp/lowlevel.hpp"
#include "lsp/metrics.hpp"
#include "lsp/planner.hpp"
#include "lsp/prior.hpp"
#include "lsp/vae.hpp"
#include "lsp/world.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<uint64_t> seed;
  std::optional<long> steps;
};

void add_common(CLI::App* sub, CommonArgs& c) {
  sub->add_option("--config", c.config_path, "JSON config file");
  sub->add_option("--out", c.out_dir, "run directory (default $LSP_RUN_DIR/<subcommand> or runs/<subcommand>)");
  sub->add_option("--seed", c.seed, "override the config seed");
  sub->add_option("--steps", c.steps, "override the config step budget");
}

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw lsp::ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw lsp::ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw lsp::ConfigError("config '" + path + "' must be a JSON object");
  return j;
}

// Defaults define the schema; a key the subcommand does not know is an error.
ordered_json resolve_config(const ordered_json& defaults, const CommonArgs& c,
                            const std::string& sub, const char* steps_key) {
  json file_cfg = load_config_file(c.config_path);
  for (auto it = file_cfg.begin(); it != file_cfg.end(); ++it)
    if (!defaults.contains(it.key()))
      throw lsp::ConfigError(sub + ": unknown config key '" + it.key() + "'");
  ordered_json out = defaults;
  for (auto it = file_cfg.begin(); it != file_cfg.end(); ++it) out[it.key()] = *it;
  if (c.seed) out["seed"] = *c.seed;
  if (c.steps) {
    if (!steps_key) throw lsp::ConfigError(sub + ": --steps does not apply here");
    out[steps_key] = *c.steps;
  }
  return out;
}

fs::path make_run_dir(const CommonArgs& c, const std::string& sub) {
  fs::path dir;
  if (!c.out_dir.empty()) {
    dir = c.out_dir;
  } else {
    const char* env = std::getenv("LSP_RUN_DIR");
    dir = (env ? fs::path(env) : fs::path("runs")) / sub;
  }
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw lsp::ConfigError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw lsp::ConfigError("short write to '" + path.string() + "'");
}

std::string hash_hex(const std::string& bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(lsp::fnv1a64(bytes)));
  return buf;
}

std::string hash_path(const fs::path& path) {
  return hash_hex(lsp::data::detail::read_file(path.string()));
}

// Collects input/output hashes as the subcommand runs; written last.
struct Manifest {
  ordered_json j;
  fs::path dir;

  Manifest(const fs::path& run_dir, const std::string& sub, const ordered_json& cfg)
      : dir(run_dir) {
    j["subcommand"] = sub;
    j["seed"] = cfg.value("seed", uint64_t{0});
    j["config_hash"] = hash_hex(cfg.dump(2));
    j["inputs"] = ordered_json::object();
    j["outputs"] = ordered_json::object();
    write_text(dir / "config.json", cfg.dump(2) + "\n");
  }
  void input(const std::string& path) { j["inputs"][path] = hash_path(path); }
  void output(const std::string& name) { j["outputs"][name] = hash_path(dir / name); }
  void finish() {
    j["outputs"]["config.json"] = hash_path(dir / "config.json");
    write_text(dir / "manifest.json", j.dump(2) + "\n");
  }
};

std::string require_path(const ordered_json& cfg, const char* key, const std::string& sub) {
  std::string p = cfg.at(key).get<std::string>();
  if (p.empty()) throw lsp::ConfigError(sub + ": config key '" + key + "' is required");
  return p;
}

// ------------------------------------------------------------------ csv dumps

template <typename Rows, typename Fn>
void write_csv(const fs::path& path, const std::string& header, const Rows& rows, Fn&& line) {
  std::string text = header + "\n";
  for (const auto& r : rows) text += line(r) + "\n";
  write_text(path, text);
}

std::string join_fields(std::initializer_list<std::string> fields) {
  std::string out;
  for (const auto& f : fields) {
    if (!out.empty()) out += ",";
    out += f;
  }
  return out;
}

// ---------------------------------------------------------------- subcommands

int cmd_gen_demos(const CommonArgs& args) {
  ordered_json defaults = lsp::world::WorldParams{}.to_json();
  defaults["clips_per_style"] = 8;
  defaults["frames_per_clip"] = 1000;
  defaults["seed"] = 1;
  ordered_json cfg = resolve_config(defaults, args, "gen-demos", "frames_per_clip");

  lsp::world::WorldParams wp = lsp::world::WorldParams::from_json(cfg);
  lsp::data::CorpusConfig cc;
  cc.clips_per_style = cfg.at("clips_per_style").get<int>();
  cc.frames_per_clip = cfg.at("frames_per_clip").get<int>();
  cc.seed = cfg.at("seed").get<uint64_t>();

  fs::path dir = make_run_dir(args, "gen-demos");
  Manifest man(dir, "gen-demos", cfg);
  lsp::data::DemoDataset ds = lsp::data::generate_demos(wp, cc);
  lsp::data::save_dataset((dir / "demos.lspd").string(), ds);
  man.output("demos.lspd");
  man.finish();
  std::printf("gen-demos: %zu clips, %zu frames -> %s\n", ds.clips.size(), ds.total_frames(),
              dir.string().c_str());
  return 0;
}

int cmd_train_vae(const CommonArgs& args) {
  ordered_json defaults = lsp::vae::VaeConfig{}.to_json();
  defaults["dataset"] = "";
  lsp::vae::VaeTrainConfig tdef;
  defaults["batch"] = tdef.batch;
  defaults["window"] = tdef.window;
  defaults["steps"] = tdef.steps;
  defaults["lr"] = tdef.lr;
  defaults["warmup"] = tdef.warmup;
  defaults["holdout_every"] = tdef.holdout_every;
  defaults["log_every"] = tdef.log_every;
  defaults["seed"] = tdef.seed;
  ordered_json cfg = resolve_config(defaults, args, "train-vae", "steps");

  std::string ds_path = require_path(cfg, "dataset", "train-vae");
  lsp::vae::VaeConfig vc = lsp::vae::VaeConfig::from_json(cfg);
  lsp::vae::VaeTrainConfig tc;
  tc.batch = cfg.at("batch").get<int>();
  tc.window = cfg.at("window").get<int>();
  tc.steps = cfg.at("steps").get<int>();
  tc.lr = cfg.at("lr").get<double>();
  tc.warmup = cfg.at("warmup").get<int>();
  tc.holdout_every = cfg.at("holdout_every").get<int>();
  tc.log_every = cfg.at("log_every").get<int>();
  tc.seed = cfg.at("seed").get<uint64_t>();

  fs::path dir = make_run_dir(args, "train-vae");
  Manifest man(dir, "train-vae", cfg);
  man.input(ds_path);
  lsp::data::DemoDataset ds = lsp::data::load_dataset(ds_path);
  lsp::vae::VaeTrainResult res = lsp::vae::train_vae(ds, vc, tc);

  lsp::vae::save_vae((dir / "vae.lspc").string(), res.vae);
  write_csv(dir / "curve.csv", "step,loss,recon,kl", res.curve, [](const lsp::vae::TrainRow& r) {
    return join_fields({std::to_string(r.step), lsp::fmt_double(r.loss), lsp::fmt_double(r.recon),
                        lsp::fmt_double(r.kl)});
  });
  ordered_json metrics = {{"initial_loss", res.initial_loss},
                          {"final_loss", res.final_loss},
                          {"holdout_recon", res.holdout_recon}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  man.output("vae.lspc");
  man.output("curve.csv");
  man.output("metrics.json");
  man.finish();
  std::printf("train-vae: loss %s -> %s, holdout recon %s -> %s\n",
              lsp::fmt_double(res.initial_loss).c_str(), lsp::fmt_double(res.final_loss).c_str(),
              lsp::fmt_double(res.holdout_recon).c_str(), dir.string().c_str());
  return 0;
}

int cmd_train_prior(const CommonArgs& args) {
  ordered_json defaults = lsp::prior::PriorConfig{}.to_json();
  defaults["dataset"] = "";
  defaults["vae"] = "";
  lsp::prior::PriorTrainConfig tdef;
  defaults["batch"] = tdef.batch;
  defaults["window"] = tdef.window;
  defaults["steps"] = tdef.steps;
  defaults["lr"] = tdef.lr;
  defaults["warmup"] = tdef.warmup;
  defaults["entropy_eps"] = tdef.entropy_eps;
  defaults["holdout_every"] = tdef.holdout_every;
  defaults["log_every"] = tdef.log_every;
  defaults["seed"] = tdef.seed;
  ordered_json cfg = resolve_config(defaults, args, "train-prior", "steps");

  std::string ds_path = require_path(cfg, "dataset", "train-prior");
  std::string vae_path = require_path(cfg, "vae", "train-prior");
  lsp::prior::PriorConfig pc = lsp::prior::PriorConfig::from_json(cfg);
  lsp::prior::PriorTrainConfig tc;
  tc.batch = cfg.at("batch").get<int>();
  tc.window = cfg.at("window").get<int>();
  tc.steps = cfg.at("steps").get<int>();
  tc.lr = cfg.at("lr").get<double>();
  tc.warmup = cfg.at("warmup").get<int>();
  tc.entropy_eps = cfg.at("entropy_eps").get<double>();
  tc.holdout_every = cfg.at("holdout_every").get<int>();
  tc.log_every = cfg.at("log_every").get<int>();
  tc.seed = cfg.at("seed").get<uint64_t>();

  fs::path dir = make_run_dir(args, "train-prior");
  Manifest man(dir, "train-prior", cfg);
  man.input(ds_path);
  man.input(vae_path);
  lsp::data::DemoDataset ds = lsp::data::load_dataset(ds_path);
  lsp::vae::Vae v = lsp::vae::load_vae(vae_path);
  lsp::prior::PriorTrainResult res = lsp::prior::train_prior(ds, v, pc, tc);

  lsp::prior::save_prior((dir / "prior.lspc").string(), res.model);
  write_csv(dir / "curve.csv", "step,loss,nll,entropy", res.curve,
            [](const lsp::prior::PriorTrainRow& r) {
              return join_fields({std::to_string(r.step), lsp::fmt_double(r.loss),
                                  lsp::fmt_double(r.nll), lsp::fmt_double(r.entropy)});
            });
  ordered_json metrics = {{"holdout_before", res.holdout_before},
                          {"holdout_after", res.holdout_after}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  man.output("prior.lspc");
  man.output("curve.csv");
  man.output("metrics.json");
  man.finish();
  std::printf("train-prior: holdout logprob %s -> %s, -> %s\n",
              lsp::fmt_double(res.holdout_before).c_str(),
              lsp::fmt_double(res.holdout_after).c_str(), dir.string().c_str());
  return 0;
}

int cmd_train_lowlevel(const CommonArgs& args) {
  ordered_json defaults = lsp::lowlevel::LowLevelConfig{}.to_json();
  defaults["dataset"] = "";
  defaults["vae"] = "";
  lsp::lowlevel::LowLevelTrainConfig tdef;
  defaults["mode"] = lsp::lowlevel::mode_name(tdef.mode);
  defaults["batch"] = tdef.batch;
  defaults["steps"] = tdef.steps;
  defaults["lr"] = tdef.lr;
  defaults["warmup"] = tdef.warmup;
  defaults["kl_coeff"] = tdef.kl_coeff;
  defaults["holdout_every"] = tdef.holdout_every;
  defaults["log_every"] = tdef.log_every;
  defaults["seed"] = tdef.seed;
  ordered_json cfg = resolve_config(defaults, args, "train-lowlevel", "steps");

  std::string ds_path = require_path(cfg, "dataset", "train-lowlevel");
  lsp::lowlevel::LowLevelConfig lc = lsp::lowlevel::LowLevelConfig::from_json(cfg);
  lsp::lowlevel::LowLevelTrainConfig tc;
  std::string mode = cfg.at("mode").get<std::string>();
  if (mode == "frozen") tc.mode = lsp::lowlevel::TrainMode::FrozenVae;
  else if (mode == "joint") tc.mode = lsp::lowlevel::TrainMode::Joint;
  else throw lsp::ConfigError("train-lowlevel: mode must be 'frozen' or 'joint', got '" + mode + "'");
  tc.batch = cfg.at("batch").get<int>();
  tc.steps = cfg.at("steps").get<long>();
  tc.lr = cfg.at("lr").get<double>();
  tc.warmup = cfg.at("warmup").get<long>();
  tc.kl_coeff = cfg.at("kl_coeff").get<double>();
  tc.holdout_every = cfg.at("holdout_every").get<int>();
  tc.log_every = cfg.at("log_every").get<long>();
  tc.seed = cfg.at("seed").get<uint64_t>();

  fs::path dir = make_run_dir(args, "train-lowlevel");
  Manifest man(dir, "train-lowlevel", cfg);
  man.input(ds_path);
  lsp::data::DemoDataset ds = lsp::data::load_dataset(ds_path);
  std::optional<lsp::vae::Vae> v;
  if (tc.mode == lsp::lowlevel::TrainMode::FrozenVae) {
    std::string vae_path = require_path(cfg, "vae", "train-lowlevel");
    man.input(vae_path);
    v = lsp::vae::load_vae(vae_path);
  }
  lsp::lowlevel::LowLevelTrainResult res =
      lsp::lowlevel::train_lowlevel(ds, v ? &*v : nullptr, lc, tc);

  lsp::lowlevel::save_lowlevel((dir / "lowlevel.lspc").string(), res.policy);
  write_csv(dir / "curve.csv", "step,loss,mse,kl", res.curve,
            [](const lsp::lowlevel::LowLevelTrainRow& r) {
              return join_fields({std::to_string(r.step), lsp::fmt_double(r.loss),
                                  lsp::fmt_double(r.mse), lsp::fmt_double(r.kl)});
            });
  ordered_json metrics = {{"initial_loss", res.initial_loss},
                          {"final_loss", res.final_loss},
                          {"holdout_mse", res.holdout_mse}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  man.output("lowlevel.lspc");
  man.output("curve.csv");
  man.output("metrics.json");
  man.finish();
  std::printf("train-lowlevel: loss %s -> %s, holdout mse %s, -> %s\n",
              lsp::fmt_double(res.initial_loss).c_str(), lsp::fmt_double(res.final_loss).c_str(),
              lsp::fmt_double(res.holdout_mse).c_str(), dir.string().c_str());
  return 0;
}

int cmd_train_highlevel(const CommonArgs& args) {
  ordered_json defaults = lsp::highlevel::HighLevelConfig{}.to_json();
  defaults["lowlevel"] = "";
  defaults["prior"] = "";
  ordered_json cfg = resolve_config(defaults, args, "train-highlevel", "budget");

  std::string pol_path = require_path(cfg, "lowlevel", "train-highlevel");
  std::string prior_path = cfg.at("prior").get<std::string>();
  lsp::highlevel::HighLevelConfig hc = lsp::highlevel::HighLevelConfig::from_json(cfg);

  fs::path dir = make_run_dir(args, "train-highlevel");
  Manifest man(dir, "train-highlevel", cfg);
  man.input(pol_path);
  lsp::lowlevel::LowLevel pol = lsp::lowlevel::load_lowlevel(pol_path);
  std::optional<lsp::prior::PriorModel> pm;
  if (!prior_path.empty()) {
    man.input(prior_path);
    pm = lsp::prior::load_prior(prior_path);
  }
  lsp::highlevel::HighLevelTrainResult res =
      lsp::highlevel::train_highlevel(hc, pol, pm ? &*pm : nullptr);

  lsp::highlevel::save_highlevel((dir / "highlevel.lspc").string(), res.hl);
  write_csv(dir / "curve.csv", lsp::highlevel::run_row_header(), res.rows,
            [](const lsp::highlevel::RunRow& r) { return lsp::highlevel::run_row_csv(r); });
  ordered_json metrics = {{"final_eval_mean", res.final_eval_mean},
                          {"prior_calls", res.prior_calls}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  man.output("highlevel.lspc");
  man.output("curve.csv");
  man.output("metrics.json");
  man.finish();
  std::printf("train-highlevel: final eval return %s, -> %s\n",
              lsp::fmt_double(res.final_eval_mean).c_str(), dir.string().c_str());
  return 0;
}

int cmd_plan(const CommonArgs& args) {
  ordered_json defaults = lsp::planner::PlanConfig{}.to_json();
  defaults["vae"] = "";
  defaults["prior"] = "";
  defaults["lowlevel"] = "";
  defaults["goal"] = {3.0, 3.0};
  defaults["radius"] = 0.6;
  defaults["seed"] = 1;
  ordered_json cfg = resolve_config(defaults, args, "plan", "step_limit");

  std::string vae_path = require_path(cfg, "vae", "plan");
  std::string prior_path = require_path(cfg, "prior", "plan");
  std::string pol_path = require_path(cfg, "lowlevel", "plan");
  lsp::planner::PlanConfig pc = lsp::planner::PlanConfig::from_json(cfg);
  pc.validate();
  if (!cfg.at("goal").is_array() || cfg.at("goal").size() != 2)
    throw lsp::ConfigError("plan: 'goal' must be [x, y]");
  lsp::kin::Vec2 goal{cfg.at("goal").at(0).get<double>(), cfg.at("goal").at(1).get<double>()};
  double radius = cfg.at("radius").get<double>();
  uint64_t seed = cfg.at("seed").get<uint64_t>();

  fs::path dir = make_run_dir(args, "plan");
  Manifest man(dir, "plan", cfg);
  man.input(vae_path);
  man.input(prior_path);
  man.input(pol_path);
  lsp::vae::Vae v = lsp::vae::load_vae(vae_path);
  lsp::prior::PriorModel m = lsp::prior::load_prior(prior_path);
  lsp::lowlevel::LowLevel pol = lsp::lowlevel::load_lowlevel(pol_path);

  lsp::planner::MpcResult res = lsp::planner::run_mpc(v, m, pol, goal, radius, pc, seed);
  write_text(dir / "trajectory.json", lsp::planner::mpc_to_json(res).dump(2) + "\n");
  ordered_json metrics = {{"success", res.success},
                          {"steps", res.steps},
                          {"plan_calls", res.plans.size()}};
  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  man.output("trajectory.json");
  man.output("metrics.json");
  man.finish();
  std::printf("plan: %s in %d steps (%zu plans), -> %s\n", res.success ? "reached" : "missed",
              res.steps, res.plans.size(), dir.string().c_str());
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  ordered_json defaults = {{"dataset", ""},
                           {"vae", ""},
                           {"prior", ""},
                           {"lowlevel", ""},
                           {"highlevel", ""},
                           {"reenact_horizon", 200},
                           {"reenact_sequences", 16},
                           {"rollout_episodes", 8},
                           {"rollout_steps", 240},
                           {"walk_steps", 2000},
                           {"seed", 1}};
  ordered_json cfg = resolve_config(defaults, args, "eval", nullptr);

  std::string ds_path = require_path(cfg, "dataset", "eval");
  std::string vae_path = require_path(cfg, "vae", "eval");
  std::string prior_path = require_path(cfg, "prior", "eval");
  std::string pol_path = require_path(cfg, "lowlevel", "eval");
  std::string hl_path = cfg.at("highlevel").get<std::string>();
  const int horizon = cfg.at("reenact_horizon").get<int>();
  const int sequences = cfg.at("reenact_sequences").get<int>();
  const int ep = cfg.at("rollout_episodes").get<int>();
  const int ep_steps = cfg.at("rollout_steps").get<int>();
  const int walk_steps = cfg.at("walk_steps").get<int>();
  const uint64_t seed = cfg.at("seed").get<uint64_t>();

  fs::path dir = make_run_dir(args, "eval");
  Manifest man(dir, "eval", cfg);
  man.input(ds_path);
  man.input(vae_path);
  man.input(prior_path);
  man.input(pol_path);
  lsp::data::DemoDataset ds = lsp::data::load_dataset(ds_path);
  lsp::vae::Vae v = lsp::vae::load_vae(vae_path);
  lsp::prior::PriorModel m = lsp::prior::load_prior(prior_path);
  lsp::lowlevel::LowLevel pol = lsp::lowlevel::load_lowlevel(pol_path);

  lsp::CounterRng rng(seed);
  lsp::lowlevel::ReenactStats enc = lsp::lowlevel::reenact_encoded(pol, v, ds, horizon);
  lsp::metrics::ReenactReport pr =
      lsp::metrics::prior_reenactment(v, m, pol, sequences, horizon, rng.split("reenact").next_u64());
  lsp::CounterRng rand_rng = rng.split("random");
  lsp::lowlevel::ReenactStats rnd =
      lsp::lowlevel::reenact_random(ds, pol.wp, horizon, pol.cfg.lead, rand_rng);

  std::vector<std::vector<lsp::kin::Frame>> demo_clips;
  for (const auto& c : ds.clips) demo_clips.push_back(c.frames);
  lsp::metrics::Coverage cov_demo = lsp::metrics::coverage_logprob(m, v, demo_clips);

  ordered_json metrics = {{"reenact_encoded", enc.mean_reward},
                          {"reenact_prior_samples", pr.mean_reward},
                          {"reenact_random", rnd.mean_reward},
                          {"coverage_demos_mean", cov_demo.mean},
                          {"coverage_demos_std", cov_demo.stddev}};

  if (!hl_path.empty()) {
    man.input(hl_path);
    lsp::highlevel::HighLevel hl = lsp::highlevel::load_highlevel(hl_path);
    if (hl.cfg.d_z != pol.cfg.d_z) throw lsp::ConfigError("eval: policy latent dims disagree");
    lsp::metrics::LatentFn act = [&](const std::vector<double>& obs) {
      return hl.actor.act_mean(obs);
    };
    auto rolls = lsp::metrics::controller_rollout_frames(hl.cfg.task, pol, act, ep, ep_steps,
                                                         rng.split("rollout").next_u64());
    lsp::metrics::Coverage cov_pol = lsp::metrics::coverage_logprob(m, v, rolls);
    metrics["coverage_policy_mean"] = cov_pol.mean;
    metrics["coverage_policy_std"] = cov_pol.stddev;
  }

  write_text(dir / "metrics.json", metrics.dump(2) + "\n");
  write_text(dir / "random_walk.json",
             lsp::metrics::random_walk_dump(lsp::world::TaskKind::GoToTargets, pol, walk_steps,
                                            rng.split("walk").next_u64())
                     .dump() +
                 "\n");
  man.output("metrics.json");
  man.output("random_walk.json");
  man.finish();
  std::printf("eval: encoded %s vs prior-sample %s vs random %s, demo coverage %s, -> %s\n",
              lsp::fmt_double(enc.mean_reward).c_str(), lsp::fmt_double(pr.mean_reward).c_str(),
              lsp::fmt_double(rnd.mean_reward).c_str(), lsp::fmt_double(cov_demo.mean).c_str(),
              dir.string().c_str());
  return 0;
}

int cmd_inspect(const std::string& path) {
  std::printf("%s\n", lsp::ckpt::inspect_checkpoint(path).dump(2).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"latent-chain pipeline"};
  app.require_subcommand(1);

  CommonArgs gen_args, vae_args, prior_args, low_args, high_args, plan_args, eval_args;
  std::string inspect_path;

  add_common(app.add_subcommand("gen-demos", "generate the scripted demo corpus"), gen_args);
  add_common(app.add_subcommand("train-vae", "train the frame auto-encoder"), vae_args);
  add_common(app.add_subcommand("train-prior", "train the latent sequence model"), prior_args);
  add_common(app.add_subcommand("train-lowlevel", "behaviour-clone the tracking policy"), low_args);
  add_common(app.add_subcommand("train-highlevel", "train the task policy"), high_args);
  add_common(app.add_subcommand("plan", "model-predictive goal navigation"), plan_args);
  add_common(app.add_subcommand("eval", "offline metrics over trained checkpoints"), eval_args);
  app.add_subcommand("inspect-checkpoint", "print a checkpoint summary")
      ->add_option("path", inspect_path, "checkpoint file")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    const std::string sub = app.get_subcommands().front()->get_name();
    if (sub == "gen-demos") return cmd_gen_demos(gen_args);
    if (sub == "train-vae") return cmd_train_vae(vae_args);
    if (sub == "train-prior") return cmd_train_prior(prior_args);
    if (sub == "train-lowlevel") return cmd_train_lowlevel(low_args);
    if (sub == "train-highlevel") return cmd_train_highlevel(high_args);
    if (sub == "plan") return cmd_plan(plan_args);
    if (sub == "eval") return cmd_eval(eval_args);
    if (sub == "inspect-checkpoint") return cmd_inspect(inspect_path);
    std::fprintf(stderr, "lsp_cli: unknown subcommand '%s'\n", sub.c_str());
    return 2;
  } catch (const lsp::ConfigError& e) {
    std::fprintf(stderr, "lsp_cli: config error: %s\n", e.what());
    return 2;
  } catch (const lsp::FormatError& e) {
    std::fprintf(stderr, "lsp_cli: format error: %s\n", e.what());
    return 3;
  } catch (const lsp::NumericError& e) {
    std::fprintf(stderr, "lsp_cli: numerical failure: %s\n", e.what());
    return 4;
  } catch (const lsp::ShapeError& e) {
    std::fprintf(stderr, "lsp_cli: format error: %s\n", e.what());
    return 3;
  } catch (const nlohmann::json::exception& e) {
    std::fprintf(stderr, "lsp_cli: config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "lsp_cli: %s\n", e.what());
    return 1;
  }
}
