#include "unifine/cache.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <spdlog/spdlog.h>

#include "unifine/digest.hpp"
#include "unifine/errors.hpp"

namespace unifine {

namespace fs = std::filesystem;

std::string CacheKey::digest() const {
  Sha256 h;
  for (const std::string* part : {&role, &backend, &operation, &input_digest}) {
    h.update(*part);
    h.update(std::string_view("\0", 1));
  }
  return h.hex_digest();
}

Cache::Cache(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec || !fs::is_directory(dir_)) throw ConfigError("cache directory not writable: " + dir_.string());
}

fs::path Cache::resolve_dir(const fs::path& configured) {
  if (const char* env = std::getenv(kCacheDirEnv); env && *env) return fs::path(env);
  return configured;
}

fs::path Cache::value_path(const CacheKey& key) const {
  const std::string d = key.digest();
  return dir_ / d.substr(0, 2) / (d + ".bin");
}

fs::path Cache::sidecar_path(const CacheKey& key) const {
  const std::string d = key.digest();
  return dir_ / d.substr(0, 2) / (d + ".json");
}

namespace {

bool slurp(const fs::path& path, std::string& out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return false;
  std::ostringstream ss;
  ss << in.rdbuf();
  out = ss.str();
  return true;
}

void publish(const fs::path& target, const std::string& bytes) {
  static std::atomic<std::uint64_t> counter{0};
  std::ostringstream tmp_name;
  tmp_name << target.filename().string() << ".tmp." << std::hash<std::thread::id>{}(std::this_thread::get_id())
           << "." << counter++;
  const fs::path tmp = target.parent_path() / tmp_name.str();
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw BackendError("cannot write cache record " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw BackendError("cannot publish cache record " + target.string());
  }
}

}  // namespace

Cache::Lookup Cache::read(const CacheKey& key, std::string& value) const {
  const fs::path vpath = value_path(key);
  if (!slurp(vpath, value)) return Lookup::Miss;
  std::string side;
  if (!slurp(sidecar_path(key), side)) return Lookup::Corrupt;
  try {
    const json meta = json::parse(side);
    if (meta.at("checksum").get<std::string>() != sha256_hex(value)) return Lookup::Corrupt;
    if (meta.at("operation").get<std::string>() != key.operation) return Lookup::Corrupt;
  } catch (const std::exception&) {
    return Lookup::Corrupt;
  }
  return Lookup::Hit;
}

void Cache::write(const CacheKey& key, const std::string& value) const {
  const fs::path vpath = value_path(key);
  fs::create_directories(vpath.parent_path());
  const auto now = std::chrono::duration_cast<std::chrono::seconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  const json meta = {{"role", key.role},          {"backend", key.backend}, {"operation", key.operation},
                     {"input", key.input_digest}, {"checksum", sha256_hex(value)},
                     {"size", value.size()},      {"created", now}};
  // The sidecar lands first so a visible value file always has one.
  publish(sidecar_path(key), meta.dump());
  publish(vpath, value);
}

std::optional<std::string> Cache::get(const CacheKey& key) {
  std::string value;
  if (read(key, value) == Lookup::Hit) return value;
  return std::nullopt;
}

std::string Cache::get_or_compute(const CacheKey& key, const std::function<std::string()>& producer) {
  std::string value;
  const Lookup found = read(key, value);
  if (found == Lookup::Hit) {
    ++hits_;
    return value;
  }
  if (found == Lookup::Corrupt) {
    ++corrupt_;
    spdlog::warn("corrupt cache record {} ({} {}); recomputing", key.digest(), key.role, key.operation);
  }
  ++misses_;

  const std::string d = key.digest();
  std::promise<std::string> promise;
  std::shared_future<std::string> pending;
  bool owner = false;
  {
    std::lock_guard lock(mu_);
    auto it = inflight_.find(d);
    if (it == inflight_.end()) {
      pending = promise.get_future().share();
      inflight_.emplace(d, pending);
      owner = true;
    } else {
      pending = it->second;
    }
  }
  if (!owner) return pending.get();

  try {
    {
      std::lock_guard lock(mu_);
      ++calls_by_op_[key.operation];
    }
    ++producer_calls_;
    value = producer();
    write(key, value);
    promise.set_value(value);
  } catch (...) {
    promise.set_exception(std::current_exception());
    std::lock_guard lock(mu_);
    inflight_.erase(d);
    throw;
  }
  std::lock_guard lock(mu_);
  inflight_.erase(d);
  return value;
}

CacheStats Cache::stats() const {
  return CacheStats{hits_.load(), misses_.load(), producer_calls_.load(), corrupt_.load()};
}

std::map<std::string, std::uint64_t> Cache::producer_calls_by_operation() const {
  std::lock_guard lock(mu_);
  return calls_by_op_;
}

std::map<std::string, std::uint64_t> Cache::records_by_operation() const {
  std::map<std::string, std::uint64_t> out;
  std::error_code ec;
  for (fs::recursive_directory_iterator it(dir_, ec), end; !ec && it != end; it.increment(ec)) {
    if (!it->is_regular_file() || it->path().extension() != ".json") continue;
    fs::path value = it->path();
    value.replace_extension(".bin");
    if (!fs::exists(value)) continue;
    std::string side;
    if (!slurp(it->path(), side)) continue;
    try {
      ++out[json::parse(side).at("operation").get<std::string>()];
    } catch (const std::exception&) {
    }
  }
  return out;
}

// ---- caching decorators ----------------------------------------------------

namespace {

class ImageDigests {
 public:
  std::string of(const ImageRef& image) const {
    const std::string path = image.path.string();
    std::string file;
    {
      std::lock_guard lock(mu_);
      if (auto it = files_.find(path); it != files_.end()) file = it->second;
    }
    if (file.empty()) {
      file = file_sha256_hex(image.path);
      std::lock_guard lock(mu_);
      files_.emplace(path, file);
    }
    if (!image.crop) return file;
    const auto& c = *image.crop;
    return file + "#" + std::to_string(c.x) + "," + std::to_string(c.y) + "," + std::to_string(c.w) + "," +
           std::to_string(c.h);
  }

 private:
  mutable std::mutex mu_;
  mutable std::unordered_map<std::string, std::string> files_;
};

std::string text_digest(std::string_view text) { return sha256_hex(text); }

template <typename Inner>
struct CachingBase {
  CachingBase(std::shared_ptr<const Inner> inner, std::shared_ptr<Cache> cache,
              std::shared_ptr<ImageDigests> images)
      : inner_(std::move(inner)), cache_(std::move(cache)), images_(std::move(images)) {}

  CacheKey key(std::string_view op, std::string input) const {
    return CacheKey{std::string(to_string(inner_->config().role)), inner_->config().identity(), std::string(op),
                    std::move(input)};
  }
  template <typename T, typename F>
  T cached(std::string_view op, std::string input, F&& produce) const {
    const std::string bytes = cache_->get_or_compute(key(op, std::move(input)), [&] {
      return json(produce()).dump();
    });
    try {
      return json::parse(bytes).get<T>();
    } catch (const std::exception& e) {
      throw BackendError("undecodable cache value for " + std::string(op) + ": " + e.what());
    }
  }

  std::shared_ptr<const Inner> inner_;
  std::shared_ptr<Cache> cache_;
  std::shared_ptr<ImageDigests> images_;
};

class CachingJoint final : public JointEmbedder, CachingBase<JointEmbedder> {
 public:
  CachingJoint(std::shared_ptr<const JointEmbedder> inner, std::shared_ptr<Cache> cache,
               std::shared_ptr<ImageDigests> images)
      : JointEmbedder(inner->config(), true), CachingBase(std::move(inner), std::move(cache), std::move(images)) {}
  std::size_t dim() const override { return inner_->dim(); }

 protected:
  JointVector do_embed_image(const ImageRef& image) const override {
    return {cached<std::vector<double>>("embed_image", images_->of(image),
                                        [&] { return inner_->embed_image(image).values; })};
  }
  JointVector do_embed_text(std::string_view text) const override {
    return {cached<std::vector<double>>("embed_text", text_digest(text),
                                        [&] { return inner_->embed_text(text).values; })};
  }
};

class CachingSentence final : public SentenceEmbedder, CachingBase<SentenceEmbedder> {
 public:
  CachingSentence(std::shared_ptr<const SentenceEmbedder> inner, std::shared_ptr<Cache> cache,
                  std::shared_ptr<ImageDigests> images)
      : SentenceEmbedder(inner->config(), true),
        CachingBase(std::move(inner), std::move(cache), std::move(images)) {}
  std::size_t dim() const override { return inner_->dim(); }

 protected:
  SentVector do_embed(std::string_view text) const override {
    return {cached<std::vector<double>>("embed", text_digest(text), [&] { return inner_->embed(text).values; })};
  }
};

class CachingCaptioner final : public Captioner, CachingBase<Captioner> {
 public:
  CachingCaptioner(std::shared_ptr<const Captioner> inner, std::shared_ptr<Cache> cache,
                   std::shared_ptr<ImageDigests> images)
      : Captioner(inner->config(), true), CachingBase(std::move(inner), std::move(cache), std::move(images)) {}

 protected:
  std::string do_caption(const ImageRef& image) const override {
    return cached<std::string>("caption", images_->of(image), [&] { return inner_->caption(image); });
  }
};

class CachingDetector final : public Detector, CachingBase<Detector> {
 public:
  CachingDetector(std::shared_ptr<const Detector> inner, std::shared_ptr<Cache> cache,
                  std::shared_ptr<ImageDigests> images)
      : Detector(inner->config(), true), CachingBase(std::move(inner), std::move(cache), std::move(images)) {}

 protected:
  std::vector<DetectedObject> do_detect(const ImageRef& image) const override {
    return cached<std::vector<DetectedObject>>("detect", images_->of(image), [&] { return inner_->detect(image); });
  }
};

class CachingScorer final : public AnswerScorer, CachingBase<AnswerScorer> {
 public:
  CachingScorer(std::shared_ptr<const AnswerScorer> inner, std::shared_ptr<Cache> cache,
                std::shared_ptr<ImageDigests> images)
      : AnswerScorer(inner->config(), true), CachingBase(std::move(inner), std::move(cache), std::move(images)) {}

  std::optional<std::string> to_declarative(std::string_view question) const override {
    const json v = cached<json>("to_declarative", text_digest(question), [&] {
      const auto t = inner_->to_declarative(question);
      return t ? json(*t) : json(nullptr);
    });
    if (v.is_null()) return std::nullopt;
    return v.get<std::string>();
  }

 protected:
  std::vector<double> do_score(std::string_view tmpl, std::span<const std::string> candidates) const override {
    Sha256 h;
    h.update(tmpl);
    for (const auto& c : candidates) {
      h.update(std::string_view("\0", 1));
      h.update(c);
    }
    return cached<std::vector<double>>("score", h.hex_digest(),
                                       [&] { return inner_->score_answers(tmpl, candidates); });
  }
};

}  // namespace

Backends with_cache(const Backends& b, std::shared_ptr<Cache> cache) {
  auto images = std::make_shared<ImageDigests>();
  Backends out;
  if (b.joint) out.joint = std::make_shared<CachingJoint>(b.joint, cache, images);
  if (b.sentence) out.sentence = std::make_shared<CachingSentence>(b.sentence, cache, images);
  if (b.captioner) out.captioner = std::make_shared<CachingCaptioner>(b.captioner, cache, images);
  if (b.detector) out.detector = std::make_shared<CachingDetector>(b.detector, cache, images);
  if (b.scorer) out.scorer = std::make_shared<CachingScorer>(b.scorer, cache, images);
  return out;
}

}  // namespace unifine
