#include "deari/params.hpp"

#include <fstream>
#include <json.hpp>

namespace deari {

using nlohmann::json;

Param& ParamStore::add(const std::string& name, Array init) {
  if (has(name)) throw std::invalid_argument("duplicate parameter: " + name);
  Param p;
  p.grad = Array(init.shape());
  p.value = std::move(init);
  index_[name] = order_.size();
  order_.push_back(name);
  return params_[name] = std::move(p);
}

Param& ParamStore::add_gaussian(const std::string& name, Array mu, Array rho) {
  if (!mu.same_shape(rho)) {
    throw std::invalid_argument("gaussian parameter " + name + ": mu " + mu.shape_string() +
                                " vs rho " + rho.shape_string());
  }
  Param& p = add(name, std::move(mu));
  p.stochastic = true;
  p.rho_grad = Array(rho.shape());
  p.rho = std::move(rho);
  return p;
}

Param& ParamStore::make_gaussian(const std::string& name, real rho_init) {
  Param& p = at(name);
  p.stochastic = true;
  p.rho = Array(p.value.shape(), rho_init);
  p.rho_grad = Array(p.value.shape());
  return p;
}

Param& ParamStore::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
  return it->second;
}

int64_t ParamStore::scalar_count() const {
  int64_t n = 0;
  for (const auto& name : order_) {
    const Param& p = params_.at(name);
    n += p.value.numel();
    if (p.stochastic) n += p.rho.numel();
  }
  return n;
}

void ParamStore::zero_grad() {
  for (auto& name : order_) {
    Param& p = params_.at(name);
    p.grad.fill(0);
    if (p.stochastic) p.rho_grad.fill(0);
  }
}

void ParamStore::for_each(const std::function<void(const std::string&, Param&)>& fn) {
  for (auto& name : order_) fn(name, params_.at(name));
}

NodePtr ParamBinding::operator[](const std::string& name) {
  auto it = value_leaves_.find(name);
  if (it != value_leaves_.end()) return it->second;
  NodePtr n = leaf(store_.at(name).value);
  value_leaves_[name] = n;
  return n;
}

NodePtr ParamBinding::rho(const std::string& name) {
  auto it = rho_leaves_.find(name);
  if (it != rho_leaves_.end()) return it->second;
  const Param& p = store_.at(name);
  if (!p.stochastic) throw std::invalid_argument("parameter has no rho: " + name);
  NodePtr n = leaf(p.rho);
  rho_leaves_[name] = n;
  return n;
}

void ParamBinding::collect_grads() {
  for (auto& [name, node] : value_leaves_) {
    Param& p = store_.at(name);
    if (node->grad.numel() != p.grad.numel()) continue;  // leaf unused by the loss
    for (int64_t i = 0; i < p.grad.numel(); ++i) p.grad[i] += node->grad[i];
  }
  for (auto& [name, node] : rho_leaves_) {
    Param& p = store_.at(name);
    if (node->grad.numel() != p.rho_grad.numel()) continue;
    for (int64_t i = 0; i < p.rho_grad.numel(); ++i) p.rho_grad[i] += node->grad[i];
  }
}

static json array_to_json(const Array& a) {
  json j;
  j["shape"] = a.shape();
  j["data"] = a.buffer();
  return j;
}

static Array array_from_json(const json& j) {
  Shape shape = j.at("shape").get<Shape>();
  std::vector<real> data = j.at("data").get<std::vector<real>>();
  return Array(std::move(shape), std::move(data));
}

void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::map<std::string, std::string>& header) {
  json j;
  j["format_version"] = 1;
  j["header"] = header;
  json params = json::object();
  json order = json::array();
  const_cast<ParamStore&>(store).for_each([&](const std::string& name, Param& p) {
    json e = array_to_json(p.value);
    if (p.stochastic) e["rho"] = array_to_json(p.rho)["data"];
    params[name] = std::move(e);
    order.push_back(name);
  });
  j["order"] = std::move(order);
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump();
}

std::map<std::string, std::string> load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  json j = json::parse(in);
  if (!j.contains("format_version") || j["format_version"].get<int>() != 1) {
    throw std::runtime_error("unsupported checkpoint format in " + path);
  }
  for (const auto& name_json : j.at("order")) {
    const std::string name = name_json.get<std::string>();
    const json& e = j.at("params").at(name);
    Array value = array_from_json(e);
    if (store.has(name)) {
      Param& p = store.at(name);
      if (!p.value.same_shape(value)) {
        throw std::runtime_error("checkpoint shape mismatch for " + name + ": " +
                                 value.shape_string() + " vs " + p.value.shape_string());
      }
      p.value = std::move(value);
      if (e.contains("rho")) {
        if (!p.stochastic) throw std::runtime_error("checkpoint has rho for deterministic " + name);
        p.rho = Array(p.value.shape(), e.at("rho").get<std::vector<real>>());
      }
    } else {
      if (e.contains("rho")) {
        Array rho(value.shape(), e.at("rho").get<std::vector<real>>());
        store.add_gaussian(name, std::move(value), std::move(rho));
      } else {
        store.add(name, std::move(value));
      }
    }
  }
  std::map<std::string, std::string> header;
  if (j.contains("header")) header = j.at("header").get<std::map<std::string, std::string>>();
  return header;
}

}  // namespace deari
