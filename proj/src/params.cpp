#include "rvos/params.hpp"

#include <cmath>
#include <stdexcept>

namespace rvos {

ParamStore::Entry& ParamStore::define(const std::string& name, Shape shape,
                                      std::vector<double> init) {
  if (numel(shape) != init.size())
    throw std::invalid_argument("param " + name + ": shape " + shape_str(shape) +
                                " does not match init size");
  auto [it, fresh] = entries_.try_emplace(name);
  if (!fresh) throw std::invalid_argument("param " + name + ": already defined");
  it->second.shape = std::move(shape);
  it->second.value = std::move(init);
  it->second.m.assign(it->second.value.size(), 0.0);
  it->second.v.assign(it->second.value.size(), 0.0);
  return it->second;
}

ParamStore::Entry& ParamStore::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("param " + name + ": not defined");
  return it->second;
}

const ParamStore::Entry& ParamStore::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw std::out_of_range("param " + name + ": not defined");
  return it->second;
}

bool ParamStore::contains(const std::string& name) const { return entries_.count(name) > 0; }

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [name, e] : entries_) n += e.value.size();
  return n;
}

Tensor ParamCtx::operator()(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const ParamStore::Entry& e = store_->at(name);
  Tensor leaf = tape_->input(e.shape, e.value);
  bound_.emplace(name, leaf);
  return leaf;
}

void Adam::step(ParamStore& store, const ParamCtx& ctx) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, e] : store.entries()) {
    const double* g = nullptr;
    auto it = ctx.bound().find(name);
    if (it != ctx.bound().end() && !it->second.grad().empty()) g = it->second.grad().data();
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double gi = g ? g[i] : 0.0;
      e.m[i] = cfg_.beta1 * e.m[i] + (1.0 - cfg_.beta1) * gi;
      e.v[i] = cfg_.beta2 * e.v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = e.m[i] / bc1;
      const double vhat = e.v[i] / bc2;
      e.value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

std::vector<double> xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                                   std::size_t count) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> out(count);
  for (double& v : out) v = rng.uniform(-limit, limit);
  return out;
}

std::vector<double> normal_init(Rng& rng, std::size_t count, double stddev) {
  std::vector<double> out(count);
  for (double& v : out) v = rng.normal() * stddev;
  return out;
}

}  // namespace rvos
