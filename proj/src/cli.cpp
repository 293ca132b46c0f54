#include "smcpose/cli.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "smcpose/config.hpp"
#include "smcpose/error.hpp"
#include "smcpose/evaluation.hpp"
#include "smcpose/experiments.hpp"
#include "smcpose/frame_stream.hpp"
#include "smcpose/predictor_io.hpp"
#include "smcpose/scenes.hpp"
#include "smcpose/tracker.hpp"

namespace smcpose {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class UsageError : public Error {
 public:
  using Error::Error;
};

struct ConfigOptions {
  std::string path;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigOptions& c) {
  cmd->add_option("-c,--config", c.path, "JSON config file");
  cmd->add_option("--set", c.overrides, "Override one config value, e.g. tracker.alpha=0.3")
      ->allow_extra_args(false);
}

RunConfig resolve_config(const ConfigOptions& c) {
  try {
    RunConfig cfg = c.path.empty() ? RunConfig{} : RunConfig::load(c.path);
    for (const std::string& o : c.overrides) cfg.apply_override(o);
    return cfg;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

json provenance(const std::string& command, const RunConfig& cfg) {
  return json{{"command", command}, {"config", cfg.to_json()}};
}

std::ofstream open_output(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << std::setprecision(10);
  return out;
}

json stats_json(const RunStats& s) {
  return json{{"frames", s.frames},
              {"detections", s.detections},
              {"filters_created", s.filters_created},
              {"filters_deactivated", s.filters_deactivated},
              {"overflow_events", s.overflow_events},
              {"max_active_filters", s.max_active_filters},
              {"filter_frames", s.filter_frames},
              {"seconds",
               {{"predict", s.predict_seconds},
                {"score", s.score_seconds},
                {"match", s.match_seconds},
                {"update", s.update_seconds},
                {"total", s.total_seconds()}}},
              {"frames_per_second", s.frames_per_second()}};
}

// The tracker always runs at the model's window length.
void adopt_model_length(RunConfig& cfg, const PredictorModel& model) {
  cfg.set_history_len(static_cast<std::size_t>(model.config().history_len));
}

// ---------------------------------------------------------------- simulate

struct SimulateArgs {
  ConfigOptions config;
  std::optional<std::uint64_t> seed;
  std::string detections;
  std::string ground_truth;
  std::string labelled;
};

void run_simulate(const SimulateArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(a.config);
  if (a.seed) cfg.scene.seed = *a.seed;
  const Scene scene = simulate(cfg.scene);
  json meta = provenance("simulate", cfg);
  meta["crossings"] = scene.crossings;
  meta["attempts"] = scene.attempts;
  auto emit = [&](FrameStream s, const std::string& path, const char* kind) {
    if (path.empty()) return;
    s.meta.extra = meta;
    s.meta.extra["stream"] = kind;
    write_stream(s, fs::path(path));
  };
  emit(scene.detections, a.detections, "detections");
  emit(scene.ground_truth, a.ground_truth, "ground_truth");
  emit(scene.labelled_detections, a.labelled, "labelled_detections");
  out << "frames " << scene.ground_truth.frames.size() << " people " << cfg.scene.num_people
      << " detections " << scene.detections.num_poses() << " crossings " << scene.crossings
      << " attempts " << scene.attempts << '\n';
}

// ------------------------------------------------------------------- train

struct TrainArgs {
  ConfigOptions config;
  std::vector<std::string> streams;
  std::size_t scenes = 6;
  std::optional<std::uint64_t> seed;
  std::size_t max_pairs = 0;
  std::string model;
  std::string loss_trace;
};

int run_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve_config(a.config);
  const std::uint64_t seed = a.seed.value_or(cfg.train.seed);
  std::vector<FrameStream> streams;
  if (a.streams.empty()) {
    if (a.scenes == 0) throw UsageError("train: give --stream files or --scenes > 0");
    streams = training_scenes(cfg.scene, a.scenes, seed);
  } else {
    for (const std::string& p : a.streams) streams.push_back(read_stream(fs::path(p)));
  }
  const std::vector<TrainingPair> data =
      collect_training_pairs(streams, cfg.history_len(), a.max_pairs, seed);
  out << "pairs " << data.size() << '\n';
  const TrainingRun run = train_predictor(cfg, data);
  for (std::size_t e = 0; e < run.epoch_loss.size(); ++e) {
    out << "epoch " << e + 1 << " loss " << run.epoch_loss[e] << '\n';
  }
  out << "reference_sigma " << run.model.config().reference_sigma << '\n';
  save_model(run.model, fs::path(a.model));
  if (!a.loss_trace.empty()) {
    std::ofstream trace = open_output(a.loss_trace);
    trace << "# " << provenance("train", cfg).dump() << '\n' << "epoch\tloss\n";
    for (std::size_t e = 0; e < run.epoch_loss.size(); ++e) {
      trace << e + 1 << '\t' << run.epoch_loss[e] << '\n';
    }
  }
  if (run.diverged) {
    err << "train: loss diverged; saved the last finite checkpoint\n";
    return kExitRuntimeError;
  }
  return kExitOk;
}

// ------------------------------------------------------------------- track

struct TrackArgs {
  ConfigOptions config;
  std::string detections;
  std::string model;
  std::string output;
  std::string stats;
};

void run_track(const TrackArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(a.config);
  const PredictorModel model = load_model(fs::path(a.model));
  adopt_model_length(cfg, model);
  const FrameStream detections = read_stream(fs::path(a.detections));
  RunStats stats;
  FrameStream tracked = track_stream(detections, model, cfg.tracker, &stats);
  tracked.meta.extra = provenance("track", cfg);
  tracked.meta.extra["model"] = a.model;
  tracked.meta.extra["source"] = detections.meta.extra;
  write_stream(tracked, fs::path(a.output));
  json js = stats_json(stats);
  js["config"] = cfg.to_json();
  if (!a.stats.empty()) open_output(a.stats) << js.dump(2) << '\n';
  out << "frames " << stats.frames << " filters " << stats.filters_created << " overflow "
      << stats.overflow_events << " fps " << stats.frames_per_second() << '\n';
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
  ConfigOptions config;
  std::string output;
  std::string ground_truth;
  std::string report;
  std::string table;
  std::string switches;
};

void run_eval(const EvalArgs& a, std::ostream& out) {
  const RunConfig cfg = resolve_config(a.config);
  const FrameStream hyp = read_stream(fs::path(a.output));
  const FrameStream gt = read_stream(fs::path(a.ground_truth));
  const EvalReport report = evaluate(hyp, gt, cfg.eval);
  const std::string echo = provenance("eval", cfg).dump();
  if (!a.report.empty()) {
    std::ofstream f = open_output(a.report);
    f << "config: " << echo << '\n';
    write_report(report, f);
  }
  if (!a.table.empty()) {
    std::ofstream f = open_output(a.table);
    f << "# " << echo << '\n';
    write_report_table(report, f);
  }
  if (!a.switches.empty()) {
    std::ofstream f = open_output(a.switches);
    f << "# " << echo << '\n' << "frame_id\tgt_id\tfrom_id\tto_id\tgap\n";
    for (const SwitchEvent& e : report.switches) {
      f << e.frame_id << '\t' << e.gt_id << '\t' << e.from_id << '\t' << e.to_id << '\t' << e.gap
        << '\n';
    }
  }
  write_report(report, out);
}

// ------------------------------------------------------------------ ablate

struct AblateArgs {
  ConfigOptions config;
  std::size_t seeds = 30;
  std::vector<std::size_t> lengths{15, 10, 7, 3};
  std::string model_dir;
  std::size_t train_scenes = 6;
  std::size_t max_pairs = 60000;
  std::size_t jobs = 1;
  std::string table;
  std::string per_seed;
};

PredictorModel model_for_length(RunConfig cfg, std::size_t len, const AblateArgs& a,
                                std::ostream& err) {
  const fs::path path = fs::path(a.model_dir) / ("predictor_L" + std::to_string(len) + ".smcm");
  if (fs::exists(path)) {
    PredictorModel m = load_model(path);
    if (m.config().history_len != static_cast<int>(len)) {
      throw Error(path.string() + " has history length " +
                  std::to_string(m.config().history_len));
    }
    err << "ablate: using " << path.string() << '\n';
    return m;
  }
  err << "ablate: training L=" << len << '\n';
  cfg.set_history_len(len);
  const TrainingRun run = train_on_scenes(cfg, a.train_scenes, cfg.train.seed, a.max_pairs);
  if (run.diverged) throw DivergenceError("training diverged at L=" + std::to_string(len));
  fs::create_directories(path.parent_path());
  save_model(run.model, path);
  return run.model;
}

void run_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = resolve_config(a.config);
  if (a.seeds == 0) throw UsageError("ablate: --seeds must be positive");
  if (a.lengths.empty()) throw UsageError("ablate: --lengths must not be empty");
  const std::size_t main_len = cfg.history_len();
  std::map<std::size_t, PredictorModel> models;
  std::vector<std::size_t> needed = a.lengths;
  needed.push_back(main_len);
  for (std::size_t len : needed) {
    if (!models.count(len)) models.emplace(len, model_for_length(cfg, len, a, err));
  }

  struct Row {
    AblationVariant variant;
    std::vector<SceneResult> results;
    EvalReport pooled;
  };
  std::vector<Row> rows;
  for (const AblationVariant& v : ablation_variants(a.lengths, main_len, cfg.tracker.smc.alpha)) {
    err << "ablate: " << v.name << '\n';
    Row row{v, run_scenes(cfg.scene, a.seeds, models.at(v.history_len),
                          apply_variant(cfg.tracker, v), cfg.eval, a.jobs),
            {}};
    for (const SceneResult& r : row.results) row.pooled += r.report;
    rows.push_back(std::move(row));
  }

  auto switches_of = [](const Row& row) {
    std::vector<double> v;
    for (const SceneResult& r : row.results) v.push_back(static_cast<double>(r.report.total.num_switches));
    return v;
  };
  const std::vector<double> baseline = switches_of(rows.back());
  const double n = static_cast<double>(a.seeds);
  const std::string echo = provenance("ablate", cfg).dump();

  std::ostringstream table;
  table << std::setprecision(6);
  table << "method\taleatoric\tepistemic\tL\tparticles\tmean_switches\tmean_keypoint0_switches\t"
           "total_switches\tmota\tratio_to_baseline\twins\tlosses\tsign_test_p\tmean_fps\n";
  for (const Row& row : rows) {
    const AblationVariant& v = row.variant;
    const std::vector<double> sw = switches_of(row);
    double total = 0.0, kp0 = 0.0, fps = 0.0;
    for (const SceneResult& r : row.results) {
      total += static_cast<double>(r.report.total.num_switches);
      kp0 += r.report.per_keypoint.empty() ? 0.0 : r.report.per_keypoint[0].num_switches;
      fps += r.stats.frames_per_second();
    }
    double base_total = 0.0;
    for (double b : baseline) base_total += b;
    const SignTest t = sign_test(sw, baseline);
    const bool is_baseline = v.num_particles == 1;
    table << v.name << '\t' << (is_baseline ? "-" : v.aleatoric ? "yes" : "no") << '\t'
          << (is_baseline ? "-" : v.epistemic ? "yes" : "no") << '\t' << v.history_len << '\t'
          << v.num_particles << '\t' << total / n << '\t' << kp0 / n << '\t' << total << '\t'
          << row.pooled.total.mota() << '\t'
          << (base_total > 0.0 ? total / base_total : std::nan("")) << '\t' << t.wins << '\t'
          << t.losses << '\t' << t.p_value << '\t' << fps / n << '\n';
  }
  if (!a.table.empty()) open_output(a.table) << "# " << echo << '\n' << table.str();
  if (!a.per_seed.empty()) {
    std::ofstream f = open_output(a.per_seed);
    f << "# " << echo << '\n'
      << "method\tscene\tseed\tnum_gt\tnum_switches\tkeypoint0_switches\tnum_misses\t"
         "num_false_positives\tmota\tfps\n";
    for (const Row& row : rows) {
      for (std::size_t i = 0; i < row.results.size(); ++i) {
        const SceneResult& r = row.results[i];
        const MotCounters& c = r.report.total;
        f << row.variant.name << '\t' << i << '\t' << r.seed << '\t' << c.num_gt << '\t'
          << c.num_switches << '\t'
          << (r.report.per_keypoint.empty() ? 0 : r.report.per_keypoint[0].num_switches) << '\t'
          << c.num_misses << '\t' << c.num_false_positives << '\t' << c.mota() << '\t'
          << r.stats.frames_per_second() << '\n';
      }
    }
  }
  out << table.str();
}

// --------------------------------------------------------------- plot-data

struct PlotArgs {
  ConfigOptions config;
  std::string detections;
  std::string model;
  std::string particles;
  std::string summary;
  std::optional<std::int64_t> first;
  std::optional<std::int64_t> last;
  std::size_t max_particles = 100;
};

void run_plot_data(const PlotArgs& a, std::ostream& out) {
  RunConfig cfg = resolve_config(a.config);
  if (a.max_particles == 0) throw UsageError("plot-data: --max-particles must be positive");
  const PredictorModel model = load_model(fs::path(a.model));
  adopt_model_length(cfg, model);
  const FrameStream detections = read_stream(fs::path(a.detections));
  const std::string echo = provenance("plot-data", cfg).dump();

  std::ofstream particles;
  if (!a.particles.empty()) {
    particles = open_output(a.particles);
    particles << "# " << echo << '\n' << "frame_id\ttrack_id\tparticle\tkeypoint\tx\ty\n";
  }
  std::ofstream summary = open_output(a.summary);
  summary << "# " << echo << '\n'
          << "frame_id\ttrack_id\tkeypoint\tcount\tmean_x\tmean_y\tsd_x\tsd_y\tlow_x\thigh_x\t"
             "low_y\thigh_y\tdetection_x\tdetection_y\n";

  Tracker tracker(model, cfg.tracker);
  std::size_t rows = 0;
  for (const Frame& frame : detections.frames) {
    const std::vector<TrackedPose> tracked = tracker.step(frame.poses, frame.frame_id);
    if ((a.first && frame.frame_id < *a.first) || (a.last && frame.frame_id > *a.last)) continue;
    std::map<std::int64_t, const Pose*> detection_of;
    for (const TrackedPose& t : tracked) detection_of[t.track_id] = &t.pose;
    const auto& proposals = tracker.last_proposals();
    const auto& ids = tracker.last_proposal_ids();
    for (std::size_t k = 0; k < proposals.size(); ++k) {
      const std::size_t count = std::min(a.max_particles, proposals[k].size());
      const auto det = detection_of.find(ids[k]);
      const std::size_t num_kp = proposals[k].empty() ? 0 : proposals[k].front().size();
      for (std::size_t i = 0; i < num_kp; ++i) {
        double sx = 0.0, sy = 0.0, sxx = 0.0, syy = 0.0;
        std::size_t m = 0;
        for (std::size_t n = 0; n < count; ++n) {
          const Keypoint& p = proposals[k][n].keypoints[i];
          if (particles.is_open()) {
            particles << frame.frame_id << '\t' << ids[k] << '\t' << n << '\t' << i << '\t'
                      << (p.visible ? p.x : std::nan("")) << '\t'
                      << (p.visible ? p.y : std::nan("")) << '\n';
          }
          if (!p.visible) continue;
          ++m;
          sx += p.x;
          sy += p.y;
          sxx += p.x * p.x;
          syy += p.y * p.y;
        }
        if (m == 0) continue;
        const double mx = sx / m, my = sy / m;
        const double dx = std::sqrt(std::max(0.0, sxx / m - mx * mx));
        const double dy = std::sqrt(std::max(0.0, syy / m - my * my));
        summary << frame.frame_id << '\t' << ids[k] << '\t' << i << '\t' << m << '\t' << mx << '\t'
                << my << '\t' << dx << '\t' << dy << '\t' << mx - 2 * dx << '\t' << mx + 2 * dx
                << '\t' << my - 2 * dy << '\t' << my + 2 * dy << '\t';
        const Keypoint* dk = det != detection_of.end() && det->second->keypoints[i].visible
                                 ? &det->second->keypoints[i]
                                 : nullptr;
        summary << (dk ? dk->x : std::nan("")) << '\t' << (dk ? dk->y : std::nan("")) << '\n';
        ++rows;
      }
    }
  }
  out << "summary rows " << rows << '\n';
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-person pose tracking with sequential Monte Carlo and a probabilistic "
               "pose predictor",
               "smcpose"};
  app.require_subcommand(1);

  SimulateArgs sim;
  CLI::App* c_sim = app.add_subcommand("simulate", "Generate a synthetic scene");
  add_config_options(c_sim, sim.config);
  c_sim->add_option("--seed", sim.seed, "Scene seed (overrides scene.seed)");
  c_sim->add_option("--detections", sim.detections, "Detection stream output")->required();
  c_sim->add_option("--ground-truth", sim.ground_truth, "Ground-truth stream output")->required();
  c_sim->add_option("--labelled", sim.labelled, "Detections of real people with their ids");

  TrainArgs tr;
  CLI::App* c_train = app.add_subcommand("train", "Fit a predictor to tracked streams");
  add_config_options(c_train, tr.config);
  c_train->add_option("--stream", tr.streams, "Stream with track ids (repeatable)")
      ->check(CLI::ExistingFile);
  c_train->add_option("--scenes", tr.scenes, "Simulated scenes to train on without --stream")
      ->capture_default_str();
  c_train->add_option("--seed", tr.seed, "Seed for scene generation and pair subsampling");
  c_train->add_option("--max-pairs", tr.max_pairs, "Keep at most this many pairs (0: all)")
      ->capture_default_str();
  c_train->add_option("--model", tr.model, "Model file output")->required();
  c_train->add_option("--loss-trace", tr.loss_trace, "Per-epoch loss table output");

  TrackArgs tk;
  CLI::App* c_track = app.add_subcommand("track", "Track a detection stream");
  add_config_options(c_track, tk.config);
  c_track->add_option("--detections", tk.detections, "Detection stream")
      ->required()
      ->check(CLI::ExistingFile);
  c_track->add_option("--model", tk.model, "Model file")->required()->check(CLI::ExistingFile);
  c_track->add_option("--out", tk.output, "Tracked stream output")->required();
  c_track->add_option("--stats", tk.stats, "Run statistics output (JSON)");

  EvalArgs ev;
  CLI::App* c_eval = app.add_subcommand("eval", "Score a tracked stream against ground truth");
  add_config_options(c_eval, ev.config);
  c_eval->add_option("--output", ev.output, "Tracked stream")
      ->required()
      ->check(CLI::ExistingFile);
  c_eval->add_option("--ground-truth", ev.ground_truth, "Ground-truth stream")
      ->required()
      ->check(CLI::ExistingFile);
  c_eval->add_option("--report", ev.report, "Key-value report output");
  c_eval->add_option("--table", ev.table, "Tab-separated report output");
  c_eval->add_option("--switches", ev.switches, "Switch log output");

  AblateArgs ab;
  CLI::App* c_ablate = app.add_subcommand("ablate", "Run the uncertainty and length ablation");
  add_config_options(c_ablate, ab.config);
  c_ablate->add_option("--seeds", ab.seeds, "Scenes per variant")->capture_default_str();
  c_ablate->add_option("--lengths", ab.lengths, "History lengths of the full method")
      ->delimiter(',')
      ->capture_default_str();
  c_ablate->add_option("--model-dir", ab.model_dir, "Models are read from or trained into here")
      ->required();
  c_ablate->add_option("--train-scenes", ab.train_scenes, "Scenes per trained model")
      ->capture_default_str();
  c_ablate->add_option("--max-pairs", ab.max_pairs, "Training pairs per model (0: all)")
      ->capture_default_str();
  c_ablate->add_option("--jobs", ab.jobs, "Worker threads")->capture_default_str();
  c_ablate->add_option("--out", ab.table, "Switch table output");
  c_ablate->add_option("--per-seed", ab.per_seed, "Per-scene table output");

  PlotArgs pl;
  CLI::App* c_plot = app.add_subcommand("plot-data", "Particle clouds for plotting");
  add_config_options(c_plot, pl.config);
  c_plot->add_option("--detections", pl.detections, "Detection stream")
      ->required()
      ->check(CLI::ExistingFile);
  c_plot->add_option("--model", pl.model, "Model file")->required()->check(CLI::ExistingFile);
  c_plot->add_option("--summary", pl.summary, "Per keypoint mean and 2 sigma band output")
      ->required();
  c_plot->add_option("--particles", pl.particles, "Raw particle positions output");
  c_plot->add_option("--from", pl.first, "First frame id to emit");
  c_plot->add_option("--to", pl.last, "Last frame id to emit");
  c_plot->add_option("--max-particles", pl.max_particles, "Particles per filter")
      ->capture_default_str();

  std::vector<const char*> argv{"smcpose"};
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsageError;
  }

  try {
    if (c_sim->parsed()) run_simulate(sim, out);
    if (c_train->parsed()) return run_train(tr, out, err);
    if (c_track->parsed()) run_track(tk, out);
    if (c_eval->parsed()) run_eval(ev, out);
    if (c_ablate->parsed()) run_ablate(ab, out, err);
    if (c_plot->parsed()) run_plot_data(pl, out);
  } catch (const UsageError& e) {
    err << "smcpose: " << e.what() << '\n';
    return kExitUsageError;
  } catch (const std::exception& e) {
    err << "smcpose: " << e.what() << '\n';
    return kExitRuntimeError;
  }
  return kExitOk;
}

}  // namespace smcpose
