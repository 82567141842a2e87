#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hquic/tensor.hpp"

namespace hquic::ad {

using VarId = int;

// Reverse-mode tape. Nodes own their value and gradient buffers; backward
// closures read/write gradients through the tape by node id.
class Tape {
 public:
  VarId push(Tensor val, std::function<void(Tape&)> back = nullptr) {
    nodes_.push_back(Node{std::move(val), Tensor{}, std::move(back)});
    return static_cast<VarId>(nodes_.size() - 1);
  }

  void set_back(VarId id, std::function<void(Tape&)> back) {
    nodes_[static_cast<std::size_t>(id)].back = std::move(back);
  }

  Tensor& val(VarId id) { return nodes_[static_cast<std::size_t>(id)].val; }
  const Tensor& val(VarId id) const {
    return nodes_[static_cast<std::size_t>(id)].val;
  }

  // Gradient buffer, allocated (zeroed) on first access.
  Tensor& grad(VarId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.numel() == 0 && n.val.numel() > 0) n.grad = Tensor(n.val.shape());
    return n.grad;
  }

  void backward(VarId root) {
    grad(root).fill(1.0);
    for (VarId id = root; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.back && n.grad.numel() > 0) n.back(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor val;
    Tensor grad;
    std::function<void(Tape&)> back;
  };
  std::vector<Node> nodes_;
};

// Trainable tensor with its accumulated gradient and Adam state.
struct Param {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor adam_m;
  Tensor adam_v;

  explicit Param(std::string n = {}, Tensor v = {})
      : name(std::move(n)), value(std::move(v)) {
    grad = Tensor(value.shape());
    adam_m = Tensor(value.shape());
    adam_v = Tensor(value.shape());
  }

  void zero_grad() { grad.fill(0.0); }
};

// One forward/backward pass. Parameters enter as leaves; after backward()
// their tape gradients are folded into Param::grad.
class Graph {
 public:
  Tape tape;

  VarId input(Tensor t) { return tape.push(std::move(t)); }

  VarId use(Param& p) {
    VarId id = tape.push(p.value);
    uses_.emplace_back(&p, id);
    return id;
  }

  void backward(VarId root) {
    tape.backward(root);
    for (auto& [p, id] : uses_) {
      const Tensor& g = tape.grad(id);
      for (std::size_t i = 0; i < g.numel(); ++i) p->grad[i] += g[i];
    }
  }

 private:
  std::vector<std::pair<Param*, VarId>> uses_;
};

// Named parameter collection with deterministic iteration order.
class ParamStore {
 public:
  Param& create(const std::string& name, Tensor init) {
    auto [it, inserted] =
        params_.emplace(name, std::make_unique<Param>(name, std::move(init)));
    if (!inserted) throw std::runtime_error("duplicate parameter: " + name);
    order_.push_back(it->second.get());
    return *it->second;
  }

  Param* find(const std::string& name) {
    auto it = params_.find(name);
    return it == params_.end() ? nullptr : it->second.get();
  }

  Param& at(const std::string& name) {
    Param* p = find(name);
    if (!p) throw std::runtime_error("unknown parameter: " + name);
    return *p;
  }

  const std::vector<Param*>& all() const { return order_; }

  void zero_grad() {
    for (Param* p : order_) p->zero_grad();
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const Param* p : order_) n += p->value.numel();
    return n;
  }

 private:
  std::map<std::string, std::unique_ptr<Param>> params_;
  std::vector<Param*> order_;
};

// Push a node and wire a backward closure that receives its own id.
template <typename Bwd>
VarId emit_op(Graph& g, Tensor out, Bwd bwd) {
  VarId id = g.tape.push(std::move(out));
  g.tape.set_back(id, [id, bwd](Tape& t) { bwd(t, id); });
  return id;
}

}  // namespace hquic::ad
