#include "evalnexus/cache.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <thread>

#include <openssl/evp.h>
#include <unistd.h>

#include "json.hpp"

#include "evalnexus/error.hpp"

namespace evalnexus {

namespace fs = std::filesystem;

Digest sha256(std::string_view bytes) {
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 || len != out.size()) {
        throw Error(ErrorKind::IoError, "sha256 failed");
    }
    return out;
}

std::string to_hex(const Digest& digest) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(digest.size() * 2);
    for (auto b : digest) {
        out += kHex[b >> 4];
        out += kHex[b & 0xf];
    }
    return out;
}

std::string sha256_hex(std::string_view bytes) { return to_hex(sha256(bytes)); }

void CanonicalWriter::be64(std::uint64_t v) {
    for (int shift = 56; shift >= 0; shift -= 8) {
        out_.push_back(static_cast<char>((v >> shift) & 0xff));
    }
}

CanonicalWriter& CanonicalWriter::str(std::string_view s) {
    tag('s');
    be64(s.size());
    out_.append(s);
    return *this;
}

CanonicalWriter& CanonicalWriter::i64(std::int64_t v) {
    tag('i');
    be64(static_cast<std::uint64_t>(v));
    return *this;
}

CanonicalWriter& CanonicalWriter::u64(std::uint64_t v) {
    tag('u');
    be64(v);
    return *this;
}

CanonicalWriter& CanonicalWriter::f64(double v) {
    tag('f');
    be64(std::bit_cast<std::uint64_t>(v));
    return *this;
}

CanonicalWriter& CanonicalWriter::boolean(bool v) {
    tag('b');
    out_.push_back(v ? '\1' : '\0');
    return *this;
}

CanonicalWriter& CanonicalWriter::digest(const Digest& d) {
    tag('d');
    out_.append(reinterpret_cast<const char*>(d.data()), d.size());
    return *this;
}

CanonicalWriter& CanonicalWriter::list(std::size_t count) {
    tag('l');
    be64(count);
    return *this;
}

StepKey step_key(std::string_view name, std::string_view version, std::string_view inputs) {
    if (name.empty() || version.empty()) {
        throw Error(ErrorKind::InvalidArgument, "step name and version must be non-empty");
    }
    StepKey key;
    key.step_name = std::string(name);
    key.step_version = std::string(version);
    key.inputs_digest = sha256(inputs);
    CanonicalWriter w;
    w.str(name).str(version).digest(key.inputs_digest);
    key.digest = sha256(w.bytes());
    return key;
}

namespace {

std::optional<std::string> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        return std::nullopt;
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

// Writes to a unique sibling and renames over `target`.
void write_atomic(const fs::path& target, std::string_view bytes) {
    static std::atomic<std::uint64_t> counter{0};
    const auto tid = std::hash<std::thread::id>{}(std::this_thread::get_id());
    fs::path tmp = target;
    tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(tid) + "-" + std::to_string(++counter);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw Error(ErrorKind::IoError, "short write to " + tmp.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) {
        fs::remove(tmp, ec);
        throw Error(ErrorKind::IoError, "cannot commit " + target.string());
    }
}

} // namespace

StepCache::StepCache(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec || !fs::is_directory(root_)) {
        throw Error(ErrorKind::IoError, "cache directory " + root_.string() + " is not writable");
    }
}

fs::path StepCache::entry_dir(const StepKey& key) const {
    const auto hex = key.hex();
    return root_ / hex.substr(0, 2) / hex;
}

std::optional<std::string> StepCache::lookup(const StepKey& key) {
    const auto dir = entry_dir(key);
    const auto meta_text = read_file(dir / "meta.json");
    if (!meta_text) {
        return std::nullopt;
    }
    auto payload = read_file(dir / "payload");
    bool valid = false;
    if (payload) {
        try {
            const auto meta = nlohmann::json::parse(*meta_text);
            valid = meta.at("payload_digest").get<std::string>() == sha256_hex(*payload);
        } catch (const nlohmann::json::exception&) {
            valid = false;
        }
    }
    if (!valid) {
        ++corrupt_;
        evict(key);
        return std::nullopt;
    }
    return payload;
}

void StepCache::store(const StepKey& key, std::string_view payload) {
    const auto dir = entry_dir(key);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error(ErrorKind::IoError, "cannot create " + dir.string());
    }
    nlohmann::json meta;
    meta["step_name"] = key.step_name;
    meta["step_version"] = key.step_version;
    meta["inputs_digest"] = to_hex(key.inputs_digest);
    meta["key_digest"] = key.hex();
    meta["payload_digest"] = sha256_hex(payload);
    meta["created_at"] = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
    // Payload first: a visible meta.json implies a complete payload.
    write_atomic(dir / "payload", payload);
    write_atomic(dir / "meta.json", meta.dump(2));
}

void StepCache::evict(const StepKey& key) {
    std::error_code ec;
    fs::remove_all(entry_dir(key), ec);
}

std::string StepCache::run_cached(const StepKey& key, const std::function<std::string()>& producer) {
    if (auto hit = lookup(key)) {
        ++hits_;
        return std::move(*hit);
    }
    ++misses_;
    std::string payload = producer();
    store(key, payload);
    return payload;
}

std::size_t StepCache::gc(std::chrono::system_clock::duration older_than) {
    const auto cutoff = std::chrono::duration_cast<std::chrono::seconds>(
                            (std::chrono::system_clock::now() - older_than).time_since_epoch())
                            .count();
    std::size_t removed = 0;
    std::error_code ec;
    for (const auto& fan : fs::directory_iterator(root_, ec)) {
        if (!fan.is_directory()) {
            continue;
        }
        for (const auto& entry : fs::directory_iterator(fan.path(), ec)) {
            if (!entry.is_directory()) {
                continue;
            }
            bool stale = true;
            if (const auto meta_text = read_file(entry.path() / "meta.json")) {
                try {
                    stale = nlohmann::json::parse(*meta_text).at("created_at").get<std::int64_t>() < cutoff;
                } catch (const nlohmann::json::exception&) {
                    stale = true;
                }
            }
            if (stale) {
                fs::remove_all(entry.path(), ec);
                ++removed;
            }
        }
    }
    return removed;
}

CacheStats StepCache::stats() const noexcept {
    return {hits_.load(), misses_.load(), corrupt_.load()};
}

std::string run_step(StepCache* cache, const StepKey& key, const std::function<std::string()>& producer) {
    if (cache == nullptr) {
        return producer();
    }
    return cache->run_cached(key, producer);
}

} // namespace evalnexus
