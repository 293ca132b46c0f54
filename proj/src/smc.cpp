#include "smcpose/smc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>

#include "smcpose/error.hpp"

namespace smcpose {

void SmcConfig::validate() const {
  if (num_particles < 1) throw InvalidArgument("num_particles must be >= 1");
  if (history_len < 1) throw InvalidArgument("history_len must be >= 1");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("alpha must be in [0, 1]");
  if (!(eliteness > 0.0 && eliteness <= 1.0)) throw InvalidArgument("eliteness must be in (0, 1]");
}

ParticleSet::ParticleSet(std::size_t count, PoseQueue history)
    : slot_(count, 0), weights_(count, count > 0 ? 1.0 / static_cast<double>(count) : 0.0) {
  if (count == 0) throw InvalidArgument("ParticleSet: count must be >= 1");
  if (history.empty()) throw InvalidArgument("ParticleSet: empty history");
  pool_.push_back(std::move(history));
}

ParticleSet ParticleSet::from_queues(std::vector<PoseQueue> queues, std::vector<double> weights) {
  if (queues.empty()) throw InvalidArgument("ParticleSet: no particles");
  if (weights.size() != queues.size()) throw InvalidArgument("ParticleSet: weight count mismatch");
  const std::size_t len = queues.front().size();
  const std::size_t num_kp = len > 0 ? queues.front().front().size() : 0;
  for (const PoseQueue& q : queues) {
    if (q.size() != len || len == 0) throw InvalidArgument("ParticleSet: ragged queue lengths");
    for (const Pose& p : q) {
      if (p.size() != num_kp) throw InvalidArgument("ParticleSet: keypoint count mismatch");
    }
  }
  ParticleSet set;
  set.pool_ = std::move(queues);
  set.slot_.resize(set.pool_.size());
  std::iota(set.slot_.begin(), set.slot_.end(), 0u);
  set.set_weights(std::move(weights));
  return set;
}

std::size_t ParticleSet::num_keypoints() const {
  return pool_.empty() || pool_.front().empty() ? 0 : pool_.front().front().size();
}

void ParticleSet::set_weights(std::vector<double> weights) {
  if (weights.size() != slot_.size()) throw InvalidArgument("set_weights: size mismatch");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw InvalidArgument("set_weights: invalid weight");
    total += w;
  }
  if (!(total > 0.0)) throw InvalidArgument("set_weights: weights sum to zero");
  for (double& w : weights) w /= total;
  weights_ = std::move(weights);
}

void ParticleSet::push(std::span<const Pose> newest) {
  if (newest.size() != slot_.size()) throw InvalidArgument("push: one pose per particle required");
  std::vector<PoseQueue> pool;
  pool.reserve(slot_.size());
  std::vector<std::uint32_t> slots(slot_.size());
  // Particles sharing a history whose new poses are identical keep sharing.
  std::vector<std::optional<std::size_t>> representative(pool_.size());
  for (std::size_t n = 0; n < slot_.size(); ++n) {
    auto& rep = representative[slot_[n]];
    if (rep && newest[*rep] == newest[n]) {
      slots[n] = slots[*rep];
      continue;
    }
    const PoseQueue& old = pool_[slot_[n]];
    PoseQueue q;
    q.reserve(old.size());
    q.insert(q.end(), old.begin() + 1, old.end());
    q.push_back(newest[n]);
    slots[n] = static_cast<std::uint32_t>(pool.size());
    pool.push_back(std::move(q));
    if (!rep) rep = n;
  }
  pool_ = std::move(pool);
  slot_ = std::move(slots);
}

void ParticleSet::compact() {
  std::vector<std::int64_t> remap(pool_.size(), -1);
  std::vector<PoseQueue> pool;
  for (std::uint32_t& s : slot_) {
    if (remap[s] < 0) {
      remap[s] = static_cast<std::int64_t>(pool.size());
      pool.push_back(pool_[s]);
    }
    s = static_cast<std::uint32_t>(remap[s]);
  }
  pool_ = std::move(pool);
}

PoseQueue make_initial_queue(const Pose& newest, std::size_t history_len) {
  if (history_len < 1) throw InvalidArgument("history_len must be >= 1");
  PoseQueue q(history_len - 1, Pose::invisible(newest.size()));
  q.push_back(newest);
  return q;
}

std::vector<Pose> propose(const ParticleSet& set, const PredictorModel& model,
                          const ProposalOptions& options, Rng& rng) {
  const std::size_t len = set.history_len();
  const std::size_t num_kp = set.num_keypoints();
  if (static_cast<int>(len) != model.config().history_len) {
    throw InvalidArgument("propose: particle history length " + std::to_string(len) +
                          " does not match model history_len " +
                          std::to_string(model.config().history_len));
  }

  // One recurrent pass per (distinct history, keypoint).
  std::vector<KeypointHistory> histories;
  histories.reserve(set.pool_size() * num_kp);
  std::vector<int> column(set.pool_size() * num_kp, -1);
  std::vector<double> pose_scale(set.pool_size(), 0.0);
  for (std::size_t u = 0; u < set.pool_size(); ++u) {
    const PoseQueue& q = set.pool_entry(u);
    for (auto it = q.rbegin(); it != q.rend(); ++it) {
      if (it->scale > 0.0) {
        pose_scale[u] = it->scale;
        break;
      }
    }
    for (std::size_t k = 0; k < num_kp; ++k) {
      if (auto h = KeypointHistory::from_poses(q, k)) {
        column[u * num_kp + k] = static_cast<int>(histories.size());
        histories.push_back(std::move(*h));
      }
    }
  }
  std::vector<const KeypointHistory*> ptrs;
  ptrs.reserve(histories.size());
  for (const auto& h : histories) ptrs.push_back(&h);
  const EncodedBatch<float> encoded = encode(model, ptrs);

  const bool dropout = options.epistemic && model.config().dropout_rate > 0.0;
  const double fixed_sigma =
      options.fixed_sigma < 0.0 ? model.config().reference_sigma : options.fixed_sigma;
  std::normal_distribution<double> normal(0.0, 1.0);
  const double rho = std::clamp(options.noise_correlation, 0.0, 1.0);
  const double rho_rest = std::sqrt(1.0 - rho * rho);
  std::vector<Pose> out;
  out.reserve(set.size());
  for (std::size_t n = 0; n < set.size(); ++n) {
    const std::size_t u = set.pool_index(n);
    const PoseQueue& q = set.pool_entry(u);
    std::optional<DropoutMask<float>> mask;
    if (dropout) mask = DropoutMask<float>::draw(model, rng);
    const double shared_x = normal(rng);
    const double shared_y = normal(rng);
    auto draw = [&](double shared) {
      if (rho >= 1.0) return shared;
      return rho * shared + rho_rest * normal(rng);
    };
    Pose pose(num_kp);
    pose.scale = pose_scale[u];
    pose.score = q.back().score;
    for (std::size_t k = 0; k < num_kp; ++k) {
      const int col = column[u * num_kp + k];
      if (col < 0) continue;
      const GaussianPrediction pred = head(model, encoded, col, mask ? &*mask : nullptr);
      double dx = pred.mean_x;
      double dy = pred.mean_y;
      if (options.aleatoric) {
        dx += std::max(pred.sigma_x, options.sigma_floor) * draw(shared_x);
        dy += std::max(pred.sigma_y, options.sigma_floor) * draw(shared_y);
      } else if (fixed_sigma > 0.0) {
        const double sigma = std::max(fixed_sigma * encoded.scale[col], options.sigma_floor);
        dx += sigma * draw(shared_x);
        dy += sigma * draw(shared_y);
      }
      const KeypointHistory& h = histories[col];
      Keypoint& kp = pose.keypoints[k];
      kp.x = h.last_x + dx;
      kp.y = h.last_y + dy;
      kp.visible = true;
      kp.confidence = 1.0;
    }
    out.push_back(std::move(pose));
  }
  return out;
}

std::size_t elite_count(std::size_t num_particles, double eliteness) {
  if (num_particles == 0) return 0;
  // The small slack keeps e.g. 0.15 * 300 at 45 despite binary rounding.
  const double raw = std::ceil(eliteness * static_cast<double>(num_particles) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, num_particles);
}

std::vector<double> elite_weights(std::span<const double> oks_values, double eliteness) {
  const std::size_t count = oks_values.size();
  if (count == 0) throw InvalidArgument("elite_weights: no particles");
  if (!(eliteness > 0.0 && eliteness <= 1.0)) {
    throw InvalidArgument("elite_weights: eliteness must be in (0, 1]");
  }
  std::vector<double> weights(count, 0.0);
  const bool informative =
      std::any_of(oks_values.begin(), oks_values.end(), [](double v) { return v > 0.0; });
  if (!informative) {
    std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(count));
    return weights;
  }
  const std::size_t m = elite_count(count, eliteness);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (oks_values[a] != oks_values[b]) return oks_values[a] > oks_values[b];
                      return a < b;
                    });
  const double w = 1.0 / static_cast<double>(m);
  for (std::size_t i = 0; i < m; ++i) weights[order[i]] = w;
  return weights;
}

ParticleSet resample(const ParticleSet& set, Rng& rng, ResamplingScheme scheme) {
  const std::size_t count = set.size();
  const auto w = set.weights();
  std::vector<double> cumulative(count);
  std::partial_sum(w.begin(), w.end(), cumulative.begin());
  const double total = cumulative.back();

  auto pick = [&](double u) {
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u * total);
    return std::min<std::size_t>(static_cast<std::size_t>(it - cumulative.begin()), count - 1);
  };

  ParticleSet out = set;
  if (scheme == ResamplingScheme::Multinomial) {
    for (std::size_t n = 0; n < count; ++n) out.slot_[n] = set.slot_[pick(uniform01(rng))];
  } else {
    const double offset = uniform01(rng);
    for (std::size_t n = 0; n < count; ++n) {
      out.slot_[n] = set.slot_[pick((static_cast<double>(n) + offset) / static_cast<double>(count))];
    }
  }
  std::fill(out.weights_.begin(), out.weights_.end(), 1.0 / static_cast<double>(count));
  out.compact();
  return out;
}

ParticleSet select_mixture(const ParticleSet& set, const PoseQueue& observation, double alpha,
                           Rng& rng) {
  if (observation.size() != set.history_len()) {
    throw InvalidArgument("select_mixture: observation history length mismatch");
  }
  for (const Pose& p : observation) {
    if (p.size() != set.num_keypoints()) {
      throw InvalidArgument("select_mixture: observation keypoint count mismatch");
    }
  }
  ParticleSet out = set;
  const auto obs_slot = static_cast<std::uint32_t>(out.pool_.size());
  bool replaced = false;
  for (std::size_t n = 0; n < out.size(); ++n) {
    if (uniform01(rng) < alpha) continue;
    out.slot_[n] = obs_slot;
    replaced = true;
  }
  if (replaced) out.pool_.push_back(observation);
  out.compact();
  return out;
}

}  // namespace smcpose
