#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "smcpose/geometry.hpp"
#include "smcpose/predictor.hpp"
#include "smcpose/random.hpp"

namespace smcpose {

// Oldest first; absolute keypoint coordinates.
using PoseQueue = std::vector<Pose>;

enum class ResamplingScheme { Multinomial, Systematic };

struct SmcConfig {
  std::size_t num_particles = 300;
  std::size_t history_len = 10;
  double alpha = 0.45;      // probability of keeping a particle's own history
  double eliteness = 0.15;  // fraction of particles given weight 1
  ResamplingScheme resampling = ResamplingScheme::Multinomial;

  void validate() const;
};

// Uncertainty sources used when proposing particles.
struct ProposalOptions {
  bool epistemic = true;     // MC dropout, one mask per particle
  bool aleatoric = true;     // sample from the predicted sigma
  // Pose-scale units, used when !aleatoric: 0 gives the mean, a negative
  // value the model's reference sigma.
  double fixed_sigma = 0.0;
  double sigma_floor = 1e-3; // pixels
  // Correlation of the standard-normal draws across one particle's
  // keypoints; each keypoint's marginal is unchanged.
  double noise_correlation = 1.0;

  bool deterministic() const { return !epistemic && !aleatoric && fixed_sigma == 0.0; }
};

// P weighted pose-history queues. Particles that share a history (after
// resampling or selection) share storage, which lets the proposal run the
// recurrent cell once per distinct history.
class ParticleSet {
 public:
  ParticleSet() = default;
  ParticleSet(std::size_t count, PoseQueue history);

  static ParticleSet from_queues(std::vector<PoseQueue> queues, std::vector<double> weights);

  std::size_t size() const { return slot_.size(); }
  std::size_t history_len() const { return pool_.empty() ? 0 : pool_.front().size(); }
  std::size_t num_keypoints() const;

  const PoseQueue& history(std::size_t n) const { return pool_[slot_[n]]; }
  std::span<const double> weights() const { return weights_; }
  void set_weights(std::vector<double> weights);

  std::size_t pool_size() const { return pool_.size(); }
  std::size_t pool_index(std::size_t n) const { return slot_[n]; }
  const PoseQueue& pool_entry(std::size_t i) const { return pool_[i]; }

  // Appends newest[n] to particle n's queue and evicts the oldest entry.
  void push(std::span<const Pose> newest);

 private:
  friend ParticleSet resample(const ParticleSet&, Rng&, ResamplingScheme);
  friend ParticleSet select_mixture(const ParticleSet&, const PoseQueue&, double, Rng&);

  void compact();

  std::vector<PoseQueue> pool_;
  std::vector<std::uint32_t> slot_;
  std::vector<double> weights_;
};

// A queue of length L holding `newest` at the last slot and invisible
// placeholders elsewhere.
PoseQueue make_initial_queue(const Pose& newest, std::size_t history_len);

// One proposed pose per particle. Keypoints never visible in a particle's
// history stay invisible.
std::vector<Pose> propose(const ParticleSet& set, const PredictorModel& model,
                          const ProposalOptions& options, Rng& rng);

std::size_t elite_count(std::size_t num_particles, double eliteness);

// Top ceil(e * P) particles by OKS get weight 1 (ties to the lower index),
// the rest 0, normalized. All-zero input yields uniform weights.
std::vector<double> elite_weights(std::span<const double> oks_values, double eliteness);

// Draws P particles from Cat(weights); output weights are uniform.
ParticleSet resample(const ParticleSet& set, Rng& rng,
                     ResamplingScheme scheme = ResamplingScheme::Multinomial);

// Each particle keeps its own history with probability alpha, otherwise its
// whole queue is replaced by `observation`.
ParticleSet select_mixture(const ParticleSet& set, const PoseQueue& observation, double alpha,
                           Rng& rng);

}  // namespace smcpose
