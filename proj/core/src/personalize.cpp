#include "prognet/personalize.hpp"

#include <atomic>
#include <thread>

#include "prognet/errors.hpp"

namespace prognet::personalize {

std::vector<core::SliceModelBundle> fine_tune(
    const std::vector<core::SliceModelBundle>& bundles,
    const superres::SrModel* sr_model, const SliceStack& baseline,
    const std::function<core::TrainContext(int slice)>& context_for_slice,
    const FineTuneOptions& opt) {
  const int T = static_cast<int>(bundles.size());
  if (baseline.slice_count() < T)
    throw ValidationError("baseline scan lacks slice " +
                          std::to_string(baseline.slice_count()));
  const nn::Vec sr_before =
      sr_model ? sr_model->flat_weights() : nn::Vec();

  std::vector<core::SliceModelBundle> tuned(bundles.begin(), bundles.end());
  if (opt.iterations <= 0) return tuned;

  auto tune_one = [&](int n) {
    core::SliceModelBundle& bundle = tuned[static_cast<std::size_t>(n)];
    core::SliceDataset data;
    data.slice_ordinal = n;
    data.slices.resize(
        static_cast<long>(bundle.cfg.image_side) * bundle.cfg.image_side, 1);
    data.slices.col(0) =
        core::flatten(baseline.slices[static_cast<std::size_t>(n)]);
    data.ages = {baseline.age};
    data.diagnoses = {baseline.diagnosis};

    core::TrainContext ctx = context_for_slice(n);
    if (opt.reconstruction_only) {
      auto base = ctx.schedule;
      ctx.schedule = [base](long epoch) {
        core::LossWeights w = base(epoch);
        w.vox = w.reg = w.b = w.z = 0.0;
        return w;
      };
    }
    core::TrainOptions train_opt;
    train_opt.epochs = opt.iterations;
    train_opt.batch_size = 1;
    train_opt.seed = Rng::derive(opt.seed, static_cast<std::uint64_t>(n));
    core::train_slice_model(bundle, data, ctx, train_opt);
  };

  if (opt.workers <= 1 || T <= 1) {
    for (int n = 0; n < T; ++n) tune_one(n);
  } else {
    std::atomic<int> next{0};
    auto worker = [&] {
      for (int n = next.fetch_add(1); n < T; n = next.fetch_add(1))
        tune_one(n);
    };
    std::vector<std::thread> pool;
    const int n_threads = std::min(opt.workers, T);
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  if (sr_model) {
    const nn::Vec sr_after = sr_model->flat_weights();
    if (sr_after.size() != sr_before.size() || sr_after != sr_before)
      throw TrainingError("super-resolution parameters changed during "
                          "personalization");
  }
  return tuned;
}

}  // namespace prognet::personalize
