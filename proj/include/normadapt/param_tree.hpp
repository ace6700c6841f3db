#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "normadapt/tensor.hpp"

namespace normadapt {

/// Named model parameters in insertion order.
///
/// Trainability is the tensor's own requires_grad flag, so a frozen entry
/// never collects a gradient during backward.
template <Scalar T>
class ParamTree {
 public:
  struct Entry {
    std::string path;
    Tensor<T> tensor;
  };

  void add(std::string path, Tensor<T> tensor, bool trainable) {
    if (index_.count(path)) throw Error("param tree: duplicate path '" + path + "'");
    tensor.set_requires_grad(trainable);
    index_.emplace(path, entries_.size());
    entries_.push_back(Entry{std::move(path), std::move(tensor)});
  }

  void remove(const std::string& path) {
    auto it = index_.find(path);
    if (it == index_.end()) throw Error("param tree: no path '" + path + "'");
    entries_.erase(entries_.begin() + static_cast<std::ptrdiff_t>(it->second));
    reindex();
  }

  bool contains(const std::string& path) const { return index_.count(path) != 0; }

  Tensor<T>& at(const std::string& path) { return entries_[lookup(path)].tensor; }
  const Tensor<T>& at(const std::string& path) const { return entries_[lookup(path)].tensor; }

  bool trainable(const std::string& path) const { return at(path).requires_grad(); }
  void set_trainable(const std::string& path, bool on) { at(path).set_requires_grad(on); }

  void freeze_all() {
    for (auto& e : entries_) e.tensor.set_requires_grad(false);
  }
  void zero_grad() {
    for (auto& e : entries_) e.tensor.zero_grad();
  }

  std::vector<std::string> paths() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.path);
    return out;
  }
  std::vector<std::string> trainable_paths() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) {
      if (e.tensor.requires_grad()) out.push_back(e.path);
    }
    return out;
  }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }
  std::size_t trainable_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.tensor.requires_grad() ? e.tensor.numel() : 0;
    return n;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Deep copy: the result shares no storage with this tree.
  ParamTree clone() const {
    ParamTree out;
    for (const auto& e : entries_) out.add(e.path, e.tensor.clone(), e.tensor.requires_grad());
    return out;
  }

 private:
  std::size_t lookup(const std::string& path) const {
    auto it = index_.find(path);
    if (it == index_.end()) throw Error("param tree: no path '" + path + "'");
    return it->second;
  }
  void reindex() {
    index_.clear();
    for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].path, i);
  }

  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace normadapt
