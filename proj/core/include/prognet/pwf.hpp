#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prognet/config.hpp"
#include "prognet/errors.hpp"
#include "prognet/losses.hpp"
#include "prognet/slice_model.hpp"

namespace prognet::pwf {

enum class LossTerm { reg, vox, b, z, rec };

/// Mean-reverting exponential weight schedule per loss term:
///   f(t) = rho^t * b + (1 - rho^t) * b * v^u
struct PwfParams {
  double rho = 0.99;
  double v = 10.0;
  double b_reg = 1.25, b_vox = 1.25, b_b = 0.002, b_z = 0.05, b_rec = 100.0;
  int u_reg = 1, u_vox = 1, u_b = 1, u_z = 1, u_rec = -1;

  void validate() const;
  double base(LossTerm term) const;
  int exponent(LossTerm term) const;
};

double pwf_value(const PwfParams& params, LossTerm term, long epoch);

core::LossWeights weights_at(const PwfParams& params, long epoch);
/// The t -> infinity limit b * v^u per term.
core::LossWeights asymptotic_weights(const PwfParams& params);
/// The t = 0 values (flat schedule used when training consistency is off).
core::LossWeights initial_weights(const PwfParams& params);

std::function<core::LossWeights(long)> make_schedule(const PwfParams& params);

PwfParams pwf_from_config(const Config& cfg);
void pwf_to_config(const PwfParams& params, Config& cfg);

// --- Random grid search ---------------------------------------------------

/// Candidate axes; the grid is their cartesian product.
struct PwfGrid {
  std::vector<double> rho{0.99};
  std::vector<double> v{10.0};
  std::vector<double> b_reg{1.25};
  std::vector<double> b_vox{1.25};
  std::vector<double> b_b{0.002};
  std::vector<double> b_z{0.05};
  std::vector<double> b_rec{100.0};

  std::size_t size() const;
  PwfParams at(std::size_t index) const;
};

PwfGrid grid_from_config(const Config& cfg);

struct SearchEntry {
  std::size_t grid_index = 0;
  PwfParams params;
  double score = 0.0;  // validation total loss after proxy training
  bool finite = false;
};

struct SearchResult {
  PwfParams best;
  std::size_t best_grid_index = 0;
  std::vector<SearchEntry> log;  // in sampled order
};

class PwfSearchError : public TrainingError {
 public:
  PwfSearchError(const std::string& msg, std::vector<SearchEntry> log)
      : TrainingError(msg), log(std::move(log)) {}
  std::vector<SearchEntry> log;
};

/// score(params, candidate_seed) -> validation total loss (lower is better).
using CandidateEvaluator =
    std::function<double(const PwfParams& params, std::uint64_t seed)>;

/// Samples `budget` tuples uniformly without replacement, scores each via
/// the evaluator, returns the argmin (ties keep the first sampled).
/// Throws PwfSearchError when every candidate scores non-finite.
SearchResult grid_search_pwf(const PwfGrid& grid,
                             const CandidateEvaluator& evaluate, long budget,
                             std::uint64_t seed);

void write_search_log(const std::vector<SearchEntry>& log,
                      const std::string& path);

// --- Common initialization -------------------------------------------------

/// One bundle pre-trained for `iterations` mini-batch steps on the central
/// slice data; its parameters seed every slice model. iterations == 0
/// returns the plain random initialization.
core::SliceModelBundle common_init(const core::SliceDataset& central_data,
                                   const core::TrainContext& ctx,
                                   const core::ModelConfig& cfg,
                                   int iterations, std::uint64_t seed);

}  // namespace prognet::pwf
