#pragma once

#include <map>
#include <string>
#include <vector>

#include "rvos/rng.hpp"
#include "rvos/tensor.hpp"

namespace rvos {

/// Persistent parameter storage plus first/second moment state for the
/// optimizer. Entries are ordered by name so every walk is deterministic.
class ParamStore {
 public:
  struct Entry {
    Shape shape;
    std::vector<double> value;
    std::vector<double> m;
    std::vector<double> v;
  };

  Entry& define(const std::string& name, Shape shape, std::vector<double> init);
  Entry& at(const std::string& name);
  const Entry& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }
  std::size_t total_values() const;

 private:
  std::map<std::string, Entry> entries_;
};

/// One training step's binding of store entries to leaves on a tape.
/// The same name always maps to the same leaf, so fan-out accumulates.
class ParamCtx {
 public:
  ParamCtx(Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {}

  Tensor operator()(const std::string& name);
  Tape& tape() { return *tape_; }
  ParamStore& store() { return *store_; }
  const std::map<std::string, Tensor>& bound() const { return bound_; }

 private:
  Tape* tape_;
  ParamStore* store_;
  std::map<std::string, Tensor> bound_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adaptive-moment update over every store entry, in name order. Entries
/// without a gradient this step decay their moments with g = 0.
class Adam {
 public:
  explicit Adam(AdamConfig cfg) : cfg_(cfg) {}
  void step(ParamStore& store, const ParamCtx& ctx);
  std::uint64_t steps_taken() const { return t_; }

 private:
  AdamConfig cfg_;
  std::uint64_t t_ = 0;
};

// Initializer helpers.
std::vector<double> xavier_uniform(Rng& rng, std::size_t fan_in, std::size_t fan_out,
                                   std::size_t count);
std::vector<double> normal_init(Rng& rng, std::size_t count, double stddev);

}  // namespace rvos
