#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace evalnexus {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(std::string_view bytes);
std::string to_hex(const Digest& digest);
std::string sha256_hex(std::string_view bytes);

/// Type-tagged, length-prefixed byte encoding. Two value sequences encode to
/// the same bytes only if they are the same sequence of typed values.
class CanonicalWriter {
public:
    CanonicalWriter& str(std::string_view s);
    CanonicalWriter& i64(std::int64_t v);
    CanonicalWriter& u64(std::uint64_t v);
    CanonicalWriter& f64(double v);
    CanonicalWriter& boolean(bool v);
    CanonicalWriter& digest(const Digest& d);
    CanonicalWriter& list(std::size_t count);

    const std::string& bytes() const noexcept { return out_; }
    std::string take() noexcept { return std::move(out_); }

private:
    void tag(char t) { out_.push_back(t); }
    void be64(std::uint64_t v);

    std::string out_;
};

struct StepKey {
    std::string step_name;
    std::string step_version;
    Digest inputs_digest{}; // sha256 of the canonical input bytes
    Digest digest{};        // sha256 over (name, version, inputs_digest)

    std::string hex() const { return to_hex(digest); }
};

StepKey step_key(std::string_view name, std::string_view version, std::string_view inputs);

struct CacheStats {
    std::uint64_t hits = 0;
    std::uint64_t misses = 0;
    std::uint64_t corrupt = 0;
};

/// Content-addressed step cache laid out as
/// `<root>/<first 2 hex>/<full hex>/{meta.json,payload}`.
class StepCache {
public:
    explicit StepCache(std::filesystem::path root);

    const std::filesystem::path& root() const noexcept { return root_; }

    // Returns the stored payload on a verified hit; otherwise runs
    // `producer`, commits its result atomically and returns it. A payload
    // that fails its digest check is evicted and recomputed.
    std::string run_cached(const StepKey& key, const std::function<std::string()>& producer);

    std::optional<std::string> lookup(const StepKey& key);
    void store(const StepKey& key, std::string_view payload);
    void evict(const StepKey& key);

    // Removes entries created more than `older_than` ago; returns the count.
    std::size_t gc(std::chrono::system_clock::duration older_than);

    std::filesystem::path entry_dir(const StepKey& key) const;
    CacheStats stats() const noexcept;

private:
    std::filesystem::path root_;
    std::atomic<std::uint64_t> hits_{0};
    std::atomic<std::uint64_t> misses_{0};
    std::atomic<std::uint64_t> corrupt_{0};
};

// Runs through `cache` when present, directly otherwise.
std::string run_step(StepCache* cache, const StepKey& key, const std::function<std::string()>& producer);

} // namespace evalnexus
