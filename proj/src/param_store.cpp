#include "kgprefix/param_store.hpp"

namespace kgprefix {

void ParamStore::insert(const std::string& name, Tensor value, bool trainable) {
    if (entries_.count(name)) throw Error("duplicate parameter name: " + name);
    entries_[name] = Entry{std::move(value), trainable};
}

bool ParamStore::contains(const std::string& name) const { return entries_.count(name) > 0; }

const Tensor& ParamStore::value(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IndexError("unknown parameter: " + name);
    return it->second.value;
}

Tensor& ParamStore::mutable_value(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IndexError("unknown parameter: " + name);
    return it->second.value;
}

bool ParamStore::trainable(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IndexError("unknown parameter: " + name);
    return it->second.trainable;
}

void ParamStore::set_trainable(const std::string& name, bool flag) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw IndexError("unknown parameter: " + name);
    it->second.trainable = flag;
}

void ParamStore::apply_freeze_schedule(const std::set<std::string>& trainable_prefixes) {
    for (auto& [name, entry] : entries_) {
        bool trainable = false;
        for (const auto& prefix : trainable_prefixes) {
            if (name.rfind(prefix, 0) == 0) {
                trainable = true;
                break;
            }
        }
        entry.trainable = trainable;
    }
}

long ParamStore::count_parameters(bool trainable_only) const {
    long total = 0;
    for (const auto& [name, entry] : entries_) {
        if (trainable_only && !entry.trainable) continue;
        total += entry.value.size();
    }
    return total;
}

std::vector<std::string> ParamStore::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, entry] : entries_) out.push_back(name);
    return out;
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : entries_)
        if (name.rfind(prefix, 0) == 0) out.push_back(name);
    return out;
}

bool ParamStore::any_with_prefix(const std::string& prefix) const {
    for (const auto& [name, entry] : entries_)
        if (name.rfind(prefix, 0) == 0) return true;
    return false;
}

void ParamStore::erase_with_prefix(const std::string& prefix) {
    for (auto it = entries_.begin(); it != entries_.end();) {
        if (it->first.rfind(prefix, 0) == 0)
            it = entries_.erase(it);
        else
            ++it;
    }
}

Var BoundParams::operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    Var v = tape_->leaf(store_->value(name), store_->trainable(name));
    bound_.emplace(name, v);
    return v;
}

}  // namespace kgprefix
