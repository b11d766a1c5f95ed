#include "deari/model.hpp"

#include <cmath>

namespace deari {

Model::Model(const RunConfig& config, int64_t input_dim)
    : config_(config), input_dim_(input_dim) {
  validate(config_);
  if (input_dim < 1) throw std::invalid_argument("model needs at least one feature");
  Rng rng(derive_seed(config_.seed, 0x696e6974ull));
  init_stack_params(params_, stack_config(), rng);
  if (config_.with_dml()) init_dml_params(params_, stack_config().attention(), rng);
  if (config_.is_bayesian()) make_recurrent_params_gaussian(params_, config_.rho_init);
}

StackConfig Model::stack_config() const {
  StackConfig sc;
  sc.layers = config_.effective_layers();
  sc.cell = CellConfig{input_dim_, config_.hidden,
                       config_.cell == "lstm" ? CellType::lstm : CellType::gru};
  sc.encoder_depth = config_.encoder_depth;
  sc.heads = config_.heads;
  sc.ffn_width = config_.ffn_width;
  sc.consistency_weight = config_.consistency_weight;
  return sc;
}

DmlConfig Model::dml_config() const {
  DmlConfig dc;
  dc.strategy = parse_strategy(config_.dml_strategy);
  dc.margin = config_.dml_margin;
  dc.alpha = config_.dml_alpha;
  dc.beta = config_.dml_beta;
  dc.epsilon = config_.dml_epsilon;
  dc.weight = config_.dml_weight;
  dc.printed_sign = config_.dml_printed_sign;
  return dc;
}

ForwardResult Model::forward(const SeriesBatch& batch, ParamBinding& binding,
                             const ForwardOptions& options) {
  ForwardResult result;
  const bool sampled = config_.is_bayesian() && options.sample;
  NoiseSet noise;
  CellBinder binder;  // default deterministic binding (Bayesian mean when frozen)
  if (sampled) {
    noise = draw_noise(params_, options.noise_seed);
    binder = stochastic_binder(noise);
  }
  result.stack = stack_forward(batch, binding, stack_config(), binder);
  result.imputation_loss = result.stack.pooled_loss;
  result.total_loss = result.imputation_loss;

  if (config_.with_dml() && options.with_dml && batch.samples() >= 2) {
    const DmlConfig dc = dml_config();
    NodePtr reps = stack_representations(result.stack, binding, stack_config(), dc);
    TripletSet set = mine_triplets(reps->value, dc.margin);
    result.mined_triplets = static_cast<int64_t>(set.triplets.size());
    result.dml_term = ms_loss(reps, pair_sets(set), dc);
    result.total_loss = add(result.total_loss, scale(result.dml_term, dc.weight));
  }
  if (sampled) {
    result.kl_term = kl_monte_carlo(binding, noise, config_.prior_std);
    result.total_loss = elbo_loss(result.total_loss, result.kl_term, options.n_batches);
  }
  return result;
}

Array Model::impute(const SeriesBatch& batch) {
  Array out({batch.samples(), batch.steps(), batch.features()});
  const int64_t chunk = std::max<int64_t>(1, config_.batch_size);
  for (int64_t start = 0; start < batch.samples(); start += chunk) {
    std::vector<int64_t> idx;
    for (int64_t i = start; i < std::min(batch.samples(), start + chunk); ++i) idx.push_back(i);
    SeriesBatch part = select_samples(batch, idx);
    ParamBinding binding(params_);
    StackResult stack = stack_forward(part, binding, stack_config());
    Array imputed = imputation_to_array(stack.imputation());
    for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i) {
      for (int64_t t = 0; t < batch.steps(); ++t) {
        for (int64_t d = 0; d < batch.features(); ++d) {
          out.at(idx[static_cast<size_t>(i)], t, d) = imputed.at(i, t, d);
        }
      }
    }
  }
  return out;
}

UncertaintyBand Model::predict_with_uncertainty(const SeriesBatch& batch, int64_t n_sim,
                                                uint64_t seed) {
  if (n_sim < 1) throw std::invalid_argument("predict_with_uncertainty: n_sim must be >= 1");
  std::vector<Array> sims;
  sims.reserve(static_cast<size_t>(n_sim));
  const int64_t chunk = std::max<int64_t>(1, config_.batch_size);
  for (int64_t sim = 0; sim < n_sim; ++sim) {
    const uint64_t sim_seed = derive_seed(seed, 0x73696d00ull + static_cast<uint64_t>(sim));
    Array out({batch.samples(), batch.steps(), batch.features()});
    for (int64_t start = 0; start < batch.samples(); start += chunk) {
      std::vector<int64_t> idx;
      for (int64_t i = start; i < std::min(batch.samples(), start + chunk); ++i) idx.push_back(i);
      SeriesBatch part = select_samples(batch, idx);
      ParamBinding binding(params_);
      CellBinder binder;
      NoiseSet noise;
      if (config_.is_bayesian()) {
        noise = draw_noise(params_, sim_seed);
        binder = stochastic_binder(noise);
      }
      StackResult stack = stack_forward(part, binding, stack_config(), binder);
      Array imputed = imputation_to_array(stack.imputation());
      for (int64_t i = 0; i < static_cast<int64_t>(idx.size()); ++i) {
        for (int64_t t = 0; t < batch.steps(); ++t) {
          for (int64_t d = 0; d < batch.features(); ++d) {
            out.at(idx[static_cast<size_t>(i)], t, d) = imputed.at(i, t, d);
          }
        }
      }
    }
    sims.push_back(std::move(out));
  }
  return summarize_simulations(sims);
}

void Model::save(const std::string& path) const {
  std::map<std::string, std::string> header = config_to_map(config_);
  header["input_dim"] = std::to_string(input_dim_);
  save_checkpoint(params_, path, header);
}

Model Model::load(const std::string& path) {
  ParamStore probe;
  std::map<std::string, std::string> header = load_checkpoint(probe, path);
  auto it = header.find("input_dim");
  if (it == header.end()) throw std::runtime_error("checkpoint missing input_dim header");
  const int64_t input_dim = std::stoll(it->second);
  header.erase(it);
  Model model(config_from_map(header), input_dim);
  // overwrite the fresh initialization with the stored values, shape-checked
  load_checkpoint(model.params_, path);
  return model;
}

}  // namespace deari
