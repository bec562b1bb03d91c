#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "hazeclip/encoder.hpp"
#include "hazeclip/toy_encoder.hpp"

namespace hazeclip {

// Maps backend selector strings ("toy" or a named pretrained backend) to
// encoder factories. Pretrained backends resolve their weights under the
// cache directory; none are compiled in, so they must be registered by the
// embedding application.
template <typename T>
class EncoderRegistry {
public:
    EncoderRegistry() {
        factories_["toy"] = [](const std::string&) { return std::make_unique<ToyEncoder<T>>(); };
    }

    void add(const std::string& name, EncoderFactory<T> factory) {
        std::lock_guard lock(mutex_);
        if (!factories_.emplace(name, std::move(factory)).second)
            throw RegistrationError("encoder backend already registered: " + name);
    }

    std::unique_ptr<VisionLanguageEncoder<T>> create(const std::string& name,
                                                     const std::string& cache_dir = default_cache_dir()) const {
        EncoderFactory<T> factory;
        {
            std::lock_guard lock(mutex_);
            auto it = factories_.find(name);
            if (it == factories_.end())
                throw BackendError("encoder backend '" + name + "' unavailable (no factory registered; weights cache: " +
                                   cache_dir + ")");
            factory = it->second;
        }
        return factory(cache_dir);
    }

    bool contains(const std::string& name) const {
        std::lock_guard lock(mutex_);
        return factories_.count(name) > 0;
    }

    static EncoderRegistry& global() {
        static EncoderRegistry registry;
        return registry;
    }

private:
    mutable std::mutex mutex_;
    std::map<std::string, EncoderFactory<T>> factories_;
};

template <typename T>
std::unique_ptr<VisionLanguageEncoder<T>> make_encoder(const std::string& backend,
                                                       const std::string& cache_dir = default_cache_dir()) {
    return EncoderRegistry<T>::global().create(backend, cache_dir);
}

}  // namespace hazeclip
