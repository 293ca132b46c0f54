#include "smcpose/config.hpp"

#include <fstream>

#include "json_fields.hpp"
#include "smcpose/error.hpp"

namespace smcpose {

namespace {

using nlohmann::json;

template <typename E>
E parse_enum(const std::string& value, std::initializer_list<std::pair<const char*, E>> options,
             const std::string& field) {
  for (const auto& [name, e] : options) {
    if (value == name) return e;
  }
  std::string allowed;
  for (const auto& [name, e] : options) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw FormatError(field + ": unknown value '" + value + "' (expected " + allowed + ")");
}

json predictor_json(const PredictorConfig& c) {
  return json{{"hidden", c.hidden},
              {"fc_hidden", c.fc_hidden},
              {"dropout_rate", c.dropout_rate},
              {"leak_slope", c.leak_slope},
              {"sigma_floor", c.sigma_floor}};
}

json train_json(const TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
              {"l2_lambda", c.l2_lambda},         {"epochs", c.epochs},
              {"seed", c.seed},                   {"beta1", c.beta1},
              {"beta2", c.beta2},                 {"epsilon", c.epsilon}};
}

json oks_json(const OksParams& p) {
  return json{{"kappas", p.kappas},
              {"scale_floor", p.scale_floor},
              {"scale_mode", p.scale_mode == OksScale::First ? "first" : "larger"}};
}

void read_oks(const json& j, OksParams& p, const std::string& ctx) {
  detail::FieldReader r(j, ctx);
  std::string mode = p.scale_mode == OksScale::First ? "first" : "larger";
  r("kappas", p.kappas)("scale_floor", p.scale_floor)("scale_mode", mode);
  r.finish();
  p.scale_mode = parse_enum<OksScale>(mode, {{"first", OksScale::First}, {"larger", OksScale::Larger}},
                                      ctx + ".scale_mode");
}

json tracker_json(const TrackerConfig& c) {
  return json{{"num_particles", c.smc.num_particles},
              {"alpha", c.smc.alpha},
              {"eliteness", c.smc.eliteness},
              {"resampling",
               c.smc.resampling == ResamplingScheme::Multinomial ? "multinomial" : "systematic"},
              {"epistemic", c.proposal.epistemic},
              {"aleatoric", c.proposal.aleatoric},
              {"fixed_sigma", c.proposal.fixed_sigma},
              {"sigma_floor", c.proposal.sigma_floor},
              {"noise_correlation", c.proposal.noise_correlation},
              {"max_filters", c.max_filters},
              {"match_threshold", c.match_threshold},
              {"initial_lifetime", c.initial_lifetime},
              {"max_lifetime", c.max_lifetime},
              {"matching", c.matching == MatchAlgorithm::Greedy ? "greedy" : "optimal"},
              {"oks", oks_json(c.oks)},
              {"seed", c.seed}};
}

}  // namespace

void RunConfig::set_history_len(std::size_t len) {
  tracker.smc.history_len = len;
  predictor.history_len = static_cast<int>(len);
}

void RunConfig::validate() const {
  predictor.validate();
  train.validate();
  tracker.validate();
  scene.validate();
  if (static_cast<int>(tracker.smc.history_len) != predictor.history_len) {
    throw InvalidArgument("config: predictor and tracker history lengths differ");
  }
  if (!(eval.assign_threshold >= 0.0 && eval.assign_threshold <= 1.0)) {
    throw InvalidArgument("config: eval.assign_threshold must be in [0, 1]");
  }
  if (!(eval.keypoint_distance_ratio > 0.0)) {
    throw InvalidArgument("config: eval.keypoint_distance_ratio must be positive");
  }
}

json RunConfig::to_json() const {
  return json{{"history_len", history_len()},
              {"predictor", predictor_json(predictor)},
              {"train", train_json(train)},
              {"tracker", tracker_json(tracker)},
              {"eval",
               {{"assign_threshold", eval.assign_threshold},
                {"keypoint_distance_ratio", eval.keypoint_distance_ratio},
                {"oks", oks_json(eval.oks)}}},
              {"scene", scene.to_json()}};
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  detail::FieldReader top(j, "config");
  std::size_t len = c.history_len();
  top("history_len", len);
  c.set_history_len(len);

  if (const json* p = top.child("predictor")) {
    detail::FieldReader r(*p, "predictor");
    r("hidden", c.predictor.hidden)("fc_hidden", c.predictor.fc_hidden)(
        "dropout_rate", c.predictor.dropout_rate)("leak_slope", c.predictor.leak_slope)(
        "sigma_floor", c.predictor.sigma_floor);
    r.finish();
  }
  if (const json* t = top.child("train")) {
    detail::FieldReader r(*t, "train");
    r("learning_rate", c.train.learning_rate)("batch_size", c.train.batch_size)(
        "l2_lambda", c.train.l2_lambda)("epochs", c.train.epochs)("seed", c.train.seed)(
        "beta1", c.train.beta1)("beta2", c.train.beta2)("epsilon", c.train.epsilon);
    r.finish();
  }
  if (const json* t = top.child("tracker")) {
    TrackerConfig& tc = c.tracker;
    detail::FieldReader r(*t, "tracker");
    std::string resampling =
        tc.smc.resampling == ResamplingScheme::Multinomial ? "multinomial" : "systematic";
    std::string matching = tc.matching == MatchAlgorithm::Greedy ? "greedy" : "optimal";
    r("num_particles", tc.smc.num_particles)("alpha", tc.smc.alpha)("eliteness", tc.smc.eliteness)(
        "resampling", resampling)("epistemic", tc.proposal.epistemic)(
        "aleatoric", tc.proposal.aleatoric)("fixed_sigma", tc.proposal.fixed_sigma)(
        "sigma_floor", tc.proposal.sigma_floor)("noise_correlation", tc.proposal.noise_correlation)("max_filters", tc.max_filters)(
        "match_threshold", tc.match_threshold)("initial_lifetime", tc.initial_lifetime)(
        "max_lifetime", tc.max_lifetime)("matching", matching)("seed", tc.seed);
    if (const json* o = r.child("oks")) read_oks(*o, tc.oks, "tracker.oks");
    r.finish();
    tc.smc.resampling = parse_enum<ResamplingScheme>(
        resampling,
        {{"multinomial", ResamplingScheme::Multinomial}, {"systematic", ResamplingScheme::Systematic}},
        "tracker.resampling");
    tc.matching = parse_enum<MatchAlgorithm>(
        matching, {{"greedy", MatchAlgorithm::Greedy}, {"optimal", MatchAlgorithm::Optimal}},
        "tracker.matching");
  }
  if (const json* e = top.child("eval")) {
    detail::FieldReader r(*e, "eval");
    r("assign_threshold", c.eval.assign_threshold)(
        "keypoint_distance_ratio", c.eval.keypoint_distance_ratio);
    if (const json* o = r.child("oks")) read_oks(*o, c.eval.oks, "eval.oks");
    r.finish();
  }
  if (const json* s = top.child("scene")) c.scene = SceneConfig::from_json(*s, c.scene);
  top.finish();
  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw InvalidArgument("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  json j = to_json();
  json::json_pointer ptr("/" + [&] {
    std::string p = key;
    for (char& ch : p) {
      if (ch == '.') ch = '/';
    }
    return p;
  }());
  if (!j.contains(ptr)) throw InvalidArgument("override: unknown key '" + key + "'");
  j[ptr] = value;
  *this = from_json(j);
}

}  // namespace smcpose
