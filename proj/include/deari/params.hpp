#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "deari/array.hpp"
#include "deari/graph.hpp"

namespace deari {

/// A named parameter. Deterministic parameters use `value`/`grad` only;
/// stochastic (Gaussian) parameters additionally carry rho, where
/// std = softplus(rho) and `value` plays the role of the mean.
struct Param {
  Array value;
  Array grad;
  bool stochastic = false;
  Array rho;
  Array rho_grad;
};

/// Named dense parameters with gradient slots, kept in insertion order so
/// that every traversal (optimizer, checkpoint, gradient check) is
/// deterministic.
class ParamStore {
 public:
  Param& add(const std::string& name, Array init);
  Param& add_gaussian(const std::string& name, Array mu, Array rho);
  /// Promote an existing deterministic parameter to a Gaussian pair, keeping
  /// its value as the mean and filling rho with `rho_init`.
  Param& make_gaussian(const std::string& name, real rho_init);

  bool has(const std::string& name) const { return index_.count(name) > 0; }
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;

  const std::vector<std::string>& names() const { return order_; }
  size_t size() const { return order_.size(); }
  int64_t scalar_count() const;

  void zero_grad();
  void for_each(const std::function<void(const std::string&, Param&)>& fn);

 private:
  std::vector<std::string> order_;
  std::map<std::string, Param> params_;
  std::map<std::string, size_t> index_;
};

/// Binds store entries to graph leaves for one define-by-run forward pass.
/// After backward(), collect_grads() accumulates leaf gradients back into
/// the store's gradient slots.
class ParamBinding {
 public:
  explicit ParamBinding(ParamStore& store) : store_(store) {}

  /// Leaf over the parameter value (the mean, for Gaussian parameters).
  NodePtr operator[](const std::string& name);
  /// Leaf over rho of a Gaussian parameter.
  NodePtr rho(const std::string& name);

  void collect_grads();
  ParamStore& store() { return store_; }

 private:
  ParamStore& store_;
  std::map<std::string, NodePtr> value_leaves_;
  std::map<std::string, NodePtr> rho_leaves_;
};

/// Checkpoint serialization: named-array JSON container with shapes, an
/// optional per-model config header, and a format-version field. Round-trip
/// is lossless at 64-bit.
void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::map<std::string, std::string>& header);
std::map<std::string, std::string> load_checkpoint(ParamStore& store, const std::string& path);

}  // namespace deari
