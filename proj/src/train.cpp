#include "deari/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace deari {

Adam::Adam(real lr, real beta1, real beta2, real eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(ParamStore& store) {
  ++t_;
  const real bc1 = 1 - std::pow(beta1_, static_cast<real>(t_));
  const real bc2 = 1 - std::pow(beta2_, static_cast<real>(t_));
  auto update = [&](Array& value, const Array& grad, Slot& slot) {
    if (slot.m.numel() != value.numel()) {
      slot.m = Array(value.shape());
      slot.v = Array(value.shape());
    }
    for (int64_t i = 0; i < value.numel(); ++i) {
      const real g = grad[i];
      slot.m[i] = beta1_ * slot.m[i] + (1 - beta1_) * g;
      slot.v[i] = beta2_ * slot.v[i] + (1 - beta2_) * g * g;
      const real m_hat = slot.m[i] / bc1;
      const real v_hat = slot.v[i] / bc2;
      value[i] -= lr_ * m_hat / (std::sqrt(v_hat) + eps_);
    }
  };
  store.for_each([&](const std::string& name, Param& p) {
    update(p.value, p.grad, value_slots_[name]);
    if (p.stochastic) update(p.rho, p.rho_grad, rho_slots_[name]);
  });
}

real clip_gradients(ParamStore& store, real max_norm) {
  real sq = 0;
  store.for_each([&](const std::string&, Param& p) {
    for (int64_t i = 0; i < p.grad.numel(); ++i) sq += p.grad[i] * p.grad[i];
    if (p.stochastic) {
      for (int64_t i = 0; i < p.rho_grad.numel(); ++i) sq += p.rho_grad[i] * p.rho_grad[i];
    }
  });
  const real norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const real scale = max_norm / norm;
    store.for_each([&](const std::string&, Param& p) {
      for (int64_t i = 0; i < p.grad.numel(); ++i) p.grad[i] *= scale;
      if (p.stochastic) {
        for (int64_t i = 0; i < p.rho_grad.numel(); ++i) p.rho_grad[i] *= scale;
      }
    });
  }
  return norm;
}

MetricsEntry evaluate(const Array& imputation, const SeriesBatch& batch) {
  if (!batch.has_eval() || batch.eval_count() == 0) {
    throw std::invalid_argument("evaluate: batch has no held-out cells");
  }
  MetricsEntry entry;
  real abs_err = 0, abs_truth = 0, abs_err_n = 0, abs_truth_n = 0;
  for (int64_t b = 0; b < batch.samples(); ++b) {
    for (int64_t t = 0; t < batch.steps(); ++t) {
      for (int64_t d = 0; d < batch.features(); ++d) {
        if (batch.eval_mask.at(b, t, d) == 0) continue;
        const real pred_n = imputation.at(b, t, d);
        const real truth_n = batch.eval_values.at(b, t, d);
        const real pred = denormalize_value(batch.stats, d, pred_n);
        const real truth = denormalize_value(batch.stats, d, truth_n);
        abs_err += std::abs(pred - truth);
        abs_truth += std::abs(truth);
        abs_err_n += std::abs(pred_n - truth_n);
        abs_truth_n += std::abs(truth_n);
        ++entry.cells;
      }
    }
  }
  if (abs_truth <= 0) throw std::invalid_argument("evaluate: zero-magnitude ground truth");
  entry.mae = abs_err / static_cast<real>(entry.cells);
  entry.mre = abs_err / abs_truth;
  entry.mae_norm = abs_err_n / static_cast<real>(entry.cells);
  entry.mre_norm = abs_truth_n > 0 ? abs_err_n / abs_truth_n : real(0);
  return entry;
}

SampleSplit split_samples(int64_t count, real val_fraction, real test_fraction, uint64_t seed) {
  std::vector<int64_t> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x73706c6974ull));
  for (int64_t i = count - 1; i > 0; --i) {
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(rng.index(i + 1))]);
  }
  const int64_t n_val = static_cast<int64_t>(std::floor(val_fraction * static_cast<real>(count)));
  const int64_t n_test = static_cast<int64_t>(std::floor(test_fraction * static_cast<real>(count)));
  SampleSplit split;
  for (int64_t i = 0; i < count; ++i) {
    const int64_t s = order[static_cast<size_t>(i)];
    if (i < n_val) split.val.push_back(s);
    else if (i < n_val + n_test) split.test.push_back(s);
    else split.train.push_back(s);
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.val.begin(), split.val.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

std::vector<int64_t> fold_assignment(int64_t count, int64_t k, uint64_t seed) {
  // Samples ordered by a per-index hash, then dealt round-robin: an exact
  // partition (sizes differ by at most 1) that is a pure function of
  // (index, seed).
  std::vector<int64_t> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  std::vector<uint64_t> keys(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    keys[static_cast<size_t>(i)] = derive_seed(seed, 0x666f6c64ull + static_cast<uint64_t>(i));
  }
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    return keys[static_cast<size_t>(a)] != keys[static_cast<size_t>(b)]
               ? keys[static_cast<size_t>(a)] < keys[static_cast<size_t>(b)]
               : a < b;
  });
  std::vector<int64_t> folds(static_cast<size_t>(count));
  for (int64_t pos = 0; pos < count; ++pos) {
    folds[static_cast<size_t>(order[static_cast<size_t>(pos)])] = pos % k;
  }
  return folds;
}

namespace {

struct Snapshot {
  std::vector<Array> values;
  std::vector<Array> rhos;
};

Snapshot take_snapshot(ParamStore& store) {
  Snapshot snap;
  store.for_each([&](const std::string&, Param& p) {
    snap.values.push_back(p.value);
    if (p.stochastic) snap.rhos.push_back(p.rho);
  });
  return snap;
}

void restore_snapshot(ParamStore& store, const Snapshot& snap) {
  size_t vi = 0, ri = 0;
  store.for_each([&](const std::string&, Param& p) {
    p.value = snap.values[vi++];
    if (p.stochastic) p.rho = snap.rhos[ri++];
  });
}

}  // namespace

TrainReport train(Model& model, const SeriesBatch& train_data, const SeriesBatch& val_data,
                  const SeriesBatch& test_data) {
  const RunConfig& config = model.config();
  const auto t_start = std::chrono::steady_clock::now();

  TrainReport report;
  report.param_scalars = model.params().scalar_count();

  Adam adam(config.learning_rate);
  FreezeSchedule schedule{config.unfreeze_every, config.open_window};
  const int64_t n = train_data.samples();
  const int64_t batch_size = std::min<int64_t>(config.batch_size, std::max<int64_t>(n, 1));
  const int64_t n_batches = n > 0 ? (n + batch_size - 1) / batch_size : 0;
  const bool can_validate = val_data.samples() > 0 && val_data.eval_count() > 0;

  Snapshot best = take_snapshot(model.params());
  report.best_val_mae = std::numeric_limits<real>::infinity();
  report.best_epoch = 0;
  int64_t global_step = 0;
  int64_t since_improvement = 0;

  for (int64_t epoch = 1; epoch <= config.epochs && n > 0; ++epoch) {
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle(derive_seed(config.seed, 0x65706f63ull + static_cast<uint64_t>(epoch)));
    for (int64_t i = n - 1; i > 0; --i) {
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(shuffle.index(i + 1))]);
    }

    real epoch_loss = 0;
    for (int64_t start = 0; start < n; start += batch_size) {
      ++global_step;
      std::vector<int64_t> idx(order.begin() + start,
                               order.begin() + std::min<int64_t>(n, start + batch_size));
      SeriesBatch minibatch = select_samples(train_data, idx);
      ForwardOptions options;
      options.sample = schedule.open_at(global_step);
      options.noise_seed = derive_seed(config.seed, 0x6e6f6973ull + static_cast<uint64_t>(global_step));
      options.n_batches = n_batches;
      model.params().zero_grad();
      ParamBinding binding(model.params());
      ForwardResult fwd = model.forward(minibatch, binding, options);
      const real loss = fwd.total_loss->value[0];
      if (!std::isfinite(loss)) {
        throw std::runtime_error("training diverged: non-finite loss at step " +
                                 std::to_string(global_step));
      }
      epoch_loss += loss;
      backward(fwd.total_loss);
      binding.collect_grads();
      clip_gradients(model.params(), config.clip_norm);
      adam.step(model.params());
    }
    report.steps = global_step;

    EpochStat stat;
    stat.epoch = epoch;
    stat.train_loss = epoch_loss / static_cast<real>(n_batches);
    if (can_validate) {
      stat.val_mae = evaluate(model.impute(val_data), val_data).mae;
      if (stat.val_mae < report.best_val_mae) {
        report.best_val_mae = stat.val_mae;
        report.best_epoch = epoch;
        best = take_snapshot(model.params());
        since_improvement = 0;
        stat.improved = true;
      } else {
        ++since_improvement;
      }
    }
    report.curve.push_back(stat);
    if (can_validate && config.patience > 0 && since_improvement >= config.patience) break;
  }

  if (can_validate && report.best_epoch > 0) restore_snapshot(model.params(), best);
  if (test_data.samples() > 0 && test_data.eval_count() > 0) {
    report.test = evaluate(model.impute(test_data), test_data);
  }
  report.wall_seconds =
      std::chrono::duration<real>(std::chrono::steady_clock::now() - t_start).count();
  return report;
}

TrainReport run_training(Model& model, const SeriesBatch& data) {
  const RunConfig& config = model.config();
  SampleSplit split = split_samples(data.samples(), config.val_fraction, config.test_fraction,
                                    config.seed);
  SeriesBatch train_data = select_samples(data, split.train);
  SeriesBatch val_data = select_samples(data, split.val);
  SeriesBatch test_data = select_samples(data, split.test);
  return train(model, train_data, val_data, test_data);
}

CrossValidationReport cross_validate(const RunConfig& config, const SeriesBatch& data, int64_t k) {
  if (k < 2) throw std::invalid_argument("cross_validate: k must be >= 2");
  if (data.samples() < k) {
    throw std::invalid_argument("cross_validate: dataset smaller than fold count");
  }
  const std::vector<int64_t> folds = fold_assignment(data.samples(), k, config.seed);
  CrossValidationReport report;
  for (int64_t fold = 0; fold < k; ++fold) {
    const int64_t val_fold = (fold + 1) % k;
    SampleSplit split;
    for (int64_t i = 0; i < data.samples(); ++i) {
      const int64_t f = folds[static_cast<size_t>(i)];
      if (f == fold) split.test.push_back(i);
      else if (f == val_fold) split.val.push_back(i);
      else split.train.push_back(i);
    }
    RunConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, 0x63760000ull + static_cast<uint64_t>(fold));
    Model model(fold_config, data.features());
    TrainReport fold_report = train(model, select_samples(data, split.train),
                                    select_samples(data, split.val),
                                    select_samples(data, split.test));
    report.folds.push_back(std::move(fold_report));
  }
  auto moments = [&](auto pick) {
    real mean = 0;
    for (const TrainReport& r : report.folds) mean += pick(r);
    mean /= static_cast<real>(report.folds.size());
    real var = 0;
    for (const TrainReport& r : report.folds) {
      const real d = pick(r) - mean;
      var += d * d;
    }
    var /= static_cast<real>(report.folds.size());
    return std::pair<real, real>(mean, std::sqrt(var));
  };
  std::tie(report.mae_mean, report.mae_std) =
      moments([](const TrainReport& r) { return r.test.mae; });
  std::tie(report.mre_mean, report.mre_std) =
      moments([](const TrainReport& r) { return r.test.mre; });
  return report;
}

std::vector<SweepRow> depth_sweep(const RunConfig& base, const SeriesBatch& data,
                                  const std::vector<int64_t>& layer_list) {
  std::vector<SweepRow> rows;
  for (int64_t layers : layer_list) {
    RunConfig config = base;
    config.layers = layers;
    if (!config.is_deari()) config.variant = config.is_bayesian() ? "bayesian-deari" : "deari";
    Model model(config, data.features());
    TrainReport report = run_training(model, data);
    SweepRow row;
    row.layers = layers;
    row.mae = report.test.mae;
    row.mre = report.test.mre;
    row.param_scalars = report.param_scalars;
    row.wall_seconds = report.wall_seconds;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace deari
