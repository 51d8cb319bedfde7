#include "prognet/pwf.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "prognet/rng.hpp"

namespace prognet::pwf {

namespace {
using nlohmann::json;
}

void PwfParams::validate() const {
  if (!(rho > 0.0 && rho < 1.0)) throw ValidationError("pwf: rho must be in (0,1)");
  if (!(v > 0.0)) throw ValidationError("pwf: v must be positive");
  for (double b : {b_reg, b_vox, b_b, b_z, b_rec})
    if (!(b > 0.0)) throw ValidationError("pwf: base weights must be positive");
  for (int u : {u_reg, u_vox, u_b, u_z, u_rec})
    if (u != 1 && u != -1) throw ValidationError("pwf: exponents must be +/-1");
}

double PwfParams::base(LossTerm term) const {
  switch (term) {
    case LossTerm::reg: return b_reg;
    case LossTerm::vox: return b_vox;
    case LossTerm::b: return b_b;
    case LossTerm::z: return b_z;
    case LossTerm::rec: return b_rec;
  }
  return 0.0;
}

int PwfParams::exponent(LossTerm term) const {
  switch (term) {
    case LossTerm::reg: return u_reg;
    case LossTerm::vox: return u_vox;
    case LossTerm::b: return u_b;
    case LossTerm::z: return u_z;
    case LossTerm::rec: return u_rec;
  }
  return 1;
}

double pwf_value(const PwfParams& params, LossTerm term, long epoch) {
  if (epoch < 0) throw ValidationError("pwf: epoch must be >= 0");
  const double b = params.base(term);
  const double vu = std::pow(params.v, params.exponent(term));
  const double decay = std::pow(params.rho, static_cast<double>(epoch));
  return decay * b + (1.0 - decay) * b * vu;
}

core::LossWeights weights_at(const PwfParams& params, long epoch) {
  core::LossWeights w;
  w.reg = pwf_value(params, LossTerm::reg, epoch);
  w.vox = pwf_value(params, LossTerm::vox, epoch);
  w.b = pwf_value(params, LossTerm::b, epoch);
  w.z = pwf_value(params, LossTerm::z, epoch);
  w.rec = pwf_value(params, LossTerm::rec, epoch);
  return w;
}

core::LossWeights asymptotic_weights(const PwfParams& params) {
  core::LossWeights w;
  w.reg = params.b_reg * std::pow(params.v, params.u_reg);
  w.vox = params.b_vox * std::pow(params.v, params.u_vox);
  w.b = params.b_b * std::pow(params.v, params.u_b);
  w.z = params.b_z * std::pow(params.v, params.u_z);
  w.rec = params.b_rec * std::pow(params.v, params.u_rec);
  return w;
}

core::LossWeights initial_weights(const PwfParams& params) {
  core::LossWeights w;
  w.reg = params.b_reg;
  w.vox = params.b_vox;
  w.b = params.b_b;
  w.z = params.b_z;
  w.rec = params.b_rec;
  return w;
}

std::function<core::LossWeights(long)> make_schedule(const PwfParams& params) {
  params.validate();
  return [params](long epoch) { return weights_at(params, epoch); };
}

PwfParams pwf_from_config(const Config& cfg) {
  PwfParams p;
  p.rho = cfg.get_double("pwf.rho", p.rho);
  p.v = cfg.get_double("pwf.v", p.v);
  p.b_reg = cfg.get_double("pwf.b_reg", p.b_reg);
  p.b_vox = cfg.get_double("pwf.b_vox", p.b_vox);
  p.b_b = cfg.get_double("pwf.b_b", p.b_b);
  p.b_z = cfg.get_double("pwf.b_z", p.b_z);
  p.b_rec = cfg.get_double("pwf.b_rec", p.b_rec);
  p.u_reg = static_cast<int>(cfg.get_int("pwf.u_reg", p.u_reg));
  p.u_vox = static_cast<int>(cfg.get_int("pwf.u_vox", p.u_vox));
  p.u_b = static_cast<int>(cfg.get_int("pwf.u_b", p.u_b));
  p.u_z = static_cast<int>(cfg.get_int("pwf.u_z", p.u_z));
  p.u_rec = static_cast<int>(cfg.get_int("pwf.u_rec", p.u_rec));
  p.validate();
  return p;
}

void pwf_to_config(const PwfParams& params, Config& cfg) {
  cfg.set("pwf.rho", std::to_string(params.rho));
  cfg.set("pwf.v", std::to_string(params.v));
  cfg.set("pwf.b_reg", std::to_string(params.b_reg));
  cfg.set("pwf.b_vox", std::to_string(params.b_vox));
  cfg.set("pwf.b_b", std::to_string(params.b_b));
  cfg.set("pwf.b_z", std::to_string(params.b_z));
  cfg.set("pwf.b_rec", std::to_string(params.b_rec));
  cfg.set("pwf.u_reg", std::to_string(params.u_reg));
  cfg.set("pwf.u_vox", std::to_string(params.u_vox));
  cfg.set("pwf.u_b", std::to_string(params.u_b));
  cfg.set("pwf.u_z", std::to_string(params.u_z));
  cfg.set("pwf.u_rec", std::to_string(params.u_rec));
}

std::size_t PwfGrid::size() const {
  return rho.size() * v.size() * b_reg.size() * b_vox.size() * b_b.size() *
         b_z.size() * b_rec.size();
}

PwfParams PwfGrid::at(std::size_t index) const {
  if (index >= size()) throw ValidationError("pwf grid index out of range");
  PwfParams p;
  auto pick = [&index](const std::vector<double>& axis) {
    const double value = axis[index % axis.size()];
    index /= axis.size();
    return value;
  };
  p.rho = pick(rho);
  p.v = pick(v);
  p.b_reg = pick(b_reg);
  p.b_vox = pick(b_vox);
  p.b_b = pick(b_b);
  p.b_z = pick(b_z);
  p.b_rec = pick(b_rec);
  return p;
}

PwfGrid grid_from_config(const Config& cfg) {
  PwfGrid g;
  g.rho = cfg.get_doubles("search.rho", g.rho);
  g.v = cfg.get_doubles("search.v", g.v);
  g.b_reg = cfg.get_doubles("search.b_reg", g.b_reg);
  g.b_vox = cfg.get_doubles("search.b_vox", g.b_vox);
  g.b_b = cfg.get_doubles("search.b_b", g.b_b);
  g.b_z = cfg.get_doubles("search.b_z", g.b_z);
  g.b_rec = cfg.get_doubles("search.b_rec", g.b_rec);
  return g;
}

SearchResult grid_search_pwf(const PwfGrid& grid,
                             const CandidateEvaluator& evaluate, long budget,
                             std::uint64_t seed) {
  if (budget < 1) throw ValidationError("search budget must be >= 1");
  const std::size_t n = grid.size();
  if (n == 0) throw ValidationError("pwf grid is empty");

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);
  const std::size_t draws = std::min<std::size_t>(order.size(),
                                                  static_cast<std::size_t>(budget));

  SearchResult result;
  bool have_best = false;
  double best_score = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    SearchEntry entry;
    entry.grid_index = order[k];
    entry.params = grid.at(order[k]);
    entry.score = evaluate(entry.params, Rng::derive(seed, order[k]));
    entry.finite = std::isfinite(entry.score);
    result.log.push_back(entry);
    if (entry.finite && (!have_best || entry.score < best_score)) {
      have_best = true;
      best_score = entry.score;
      result.best = entry.params;
      result.best_grid_index = entry.grid_index;
    }
  }
  if (!have_best)
    throw PwfSearchError("every sampled candidate diverged", result.log);
  return result;
}

void write_search_log(const std::vector<SearchEntry>& log,
                      const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write search log " + path);
  for (const auto& e : log) {
    json j;
    j["grid_index"] = e.grid_index;
    j["rho"] = e.params.rho;
    j["v"] = e.params.v;
    j["b_reg"] = e.params.b_reg;
    j["b_vox"] = e.params.b_vox;
    j["b_b"] = e.params.b_b;
    j["b_z"] = e.params.b_z;
    j["b_rec"] = e.params.b_rec;
    j["score"] = e.finite ? json(e.score) : json();
    out << j.dump() << "\n";
  }
}

core::SliceModelBundle common_init(const core::SliceDataset& central_data,
                                   const core::TrainContext& ctx,
                                   const core::ModelConfig& cfg,
                                   int iterations, std::uint64_t seed) {
  core::SliceModelBundle bundle =
      core::SliceModelBundle::create(central_data.slice_ordinal, cfg, seed);
  if (iterations <= 0) return bundle;
  core::TrainOptions opt;
  opt.epochs = iterations;  // upper bound; the step limit is what matters
  opt.batch_size = 100;
  opt.seed = Rng::derive(seed, 0xC0FFEE);
  opt.step_limit = iterations;
  core::train_slice_model(bundle, central_data, ctx, opt);
  return bundle;
}

}  // namespace prognet::pwf
