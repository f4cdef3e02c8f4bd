// Named parameter registry with trainability flags. Map ordering is
// deterministic, which keeps optimizer sweeps and serialization stable.
#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "kgprefix/tape.hpp"
#include "kgprefix/tensor.hpp"

namespace kgprefix {

class ParamStore {
public:
    struct Entry {
        Tensor value;
        bool trainable = false;
    };

    void insert(const std::string& name, Tensor value, bool trainable = false);
    bool contains(const std::string& name) const;
    const Tensor& value(const std::string& name) const;
    Tensor& mutable_value(const std::string& name);
    bool trainable(const std::string& name) const;
    void set_trainable(const std::string& name, bool flag);
    // Marks entries trainable exactly when their name starts with one of the
    // given prefixes; everything else becomes frozen.
    void apply_freeze_schedule(const std::set<std::string>& trainable_prefixes);

    long count_parameters(bool trainable_only) const;
    std::vector<std::string> names() const;
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;
    bool any_with_prefix(const std::string& prefix) const;
    void erase_with_prefix(const std::string& prefix);
    size_t size() const { return entries_.size(); }

    const std::map<std::string, Entry>& entries() const { return entries_; }

private:
    std::map<std::string, Entry> entries_;
};

// Binds store entries to a tape for one forward/backward pass. Each entry
// is copied into a leaf on first access (trainable entries require grad),
// so store tensors are never mutated by graph execution.
class BoundParams {
public:
    BoundParams(Tape& tape, ParamStore& store) : tape_(&tape), store_(&store) {}

    Var operator()(const std::string& name);
    Tape& tape() { return *tape_; }
    ParamStore& store() { return *store_; }
    const std::map<std::string, Var>& bound() const { return bound_; }

private:
    Tape* tape_;
    ParamStore* store_;
    std::map<std::string, Var> bound_;
};

}  // namespace kgprefix
