#include "unifine/stub_backends.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <random>

#include "unifine/digest.hpp"
#include "unifine/errors.hpp"

namespace unifine {

std::vector<double> stub_expand(std::string_view domain, std::uint64_t seed,
                                std::string_view input, std::size_t dim) {
  Sha256 h;
  h.update(kStubExpansion).update(std::string_view("\0", 1));
  h.update(domain).update(std::string_view("\0", 1));
  std::array<unsigned char, 8> seed_bytes{};
  for (int i = 0; i < 8; ++i) seed_bytes[i] = static_cast<unsigned char>(seed >> (56 - 8 * i));
  h.update(std::span<const unsigned char>(seed_bytes));
  h.update(input);
  std::mt19937_64 gen(h.digest64());
  std::vector<double> v(dim);
  for (double& x : v) x = static_cast<double>(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
  return v;
}

json load_stub_fixture(const BackendConfig& config) {
  const json& s = config.settings;
  if (auto it = s.find("fixture_data"); it != s.end()) return *it;
  if (auto it = s.find("fixture"); it != s.end() && it->is_string() && !it->get<std::string>().empty()) {
    const std::string path = it->get<std::string>();
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open stub fixture: " + path);
    try {
      return json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("malformed stub fixture " + path + ": " + e.what());
    }
  }
  return json::object();
}

namespace {

std::uint64_t seed_of(const BackendConfig& c) { return c.settings.value("seed", std::uint64_t{0}); }

std::size_t dim_of(const BackendConfig& c, std::size_t fallback) {
  const auto d = c.settings.value("dim", fallback);
  if (d == 0) throw ConfigError("stub " + std::string(to_string(c.role)) + ": dim must be positive");
  return d;
}

const json* lookup(const json& fixture, std::string_view section, const std::string& key) {
  auto sec = fixture.find(section);
  if (sec == fixture.end() || !sec->is_object()) return nullptr;
  auto it = sec->find(key);
  return it == sec->end() ? nullptr : &*it;
}

std::vector<double> canned_vector(const json& v, std::size_t dim, const std::string& key) {
  auto values = v.get<std::vector<double>>();
  if (values.size() != dim)
    throw BackendError("stub fixture vector for '" + key + "' has dim " +
                       std::to_string(values.size()) + ", expected " + std::to_string(dim));
  return values;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

constexpr std::array<std::string_view, 20> kSynthCategories = {
    "person", "dog",    "cat",   "car",    "table",  "pizza", "tree",     "sky",   "building", "bus",
    "shirt",  "plate",  "window", "grass", "umbrella", "horse", "flowers", "chair", "bicycle", "sign"};
constexpr std::array<std::string_view, 10> kSynthAttributes = {
    "red", "white", "black", "blue", "green", "yellow", "wooden", "large", "small", "hot"};

}  // namespace

// ---- joint -----------------------------------------------------------------

StubJointEmbedder::StubJointEmbedder(BackendConfig config)
    : JointEmbedder(std::move(config)),
      dim_(dim_of(this->config(), 16)),
      seed_(seed_of(this->config())),
      fixture_(load_stub_fixture(this->config())) {}

JointVector StubJointEmbedder::do_embed_image(const ImageRef& image) const {
  const std::string digest = image_content_digest(load_image(image));
  if (const json* v = lookup(fixture_, "joint_images", digest))
    return {canned_vector(*v, dim_, digest)};
  return {stub_expand("joint/image", seed_, digest, dim_)};
}

JointVector StubJointEmbedder::do_embed_text(std::string_view text) const {
  const std::string key(text);
  if (const json* v = lookup(fixture_, "joint_texts", key)) return {canned_vector(*v, dim_, key)};
  return {stub_expand("joint/text", seed_, text, dim_)};
}

// ---- sentence --------------------------------------------------------------

StubSentenceEmbedder::StubSentenceEmbedder(BackendConfig config)
    : SentenceEmbedder(std::move(config)),
      dim_(dim_of(this->config(), 16)),
      seed_(seed_of(this->config())),
      bag_of_words_(this->config().settings.value("mode", std::string("bag_of_words")) ==
                    "bag_of_words"),
      fixture_(load_stub_fixture(this->config())) {
  const auto mode = this->config().settings.value("mode", std::string("bag_of_words"));
  if (mode != "bag_of_words" && mode != "hash")
    throw ConfigError("stub sentence_embedder: unknown mode '" + mode + "'");
}

SentVector StubSentenceEmbedder::do_embed(std::string_view text) const {
  const std::string key(text);
  if (const json* v = lookup(fixture_, "sentence_texts", key)) {
    auto values = canned_vector(*v, dim_, key);
    bool nonzero = false;
    for (double x : values) nonzero |= x != 0.0;
    if (!nonzero) throw BackendError("stub fixture sentence vector for '" + key + "' is zero");
    return {std::move(values)};
  }
  std::vector<double> v(dim_, 0.0);
  if (bag_of_words_) {
    for (const auto& tok : tokenize(text)) {
      const auto t = stub_expand("sentence/token", seed_, tok, dim_);
      for (std::size_t i = 0; i < dim_; ++i) v[i] += t[i];
    }
  }
  double norm = 0.0;
  for (double x : v) norm += x * x;
  if (norm == 0.0) {
    v = stub_expand("sentence/text", seed_, text, dim_);
    norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm == 0.0) v[0] = 1.0;
  }
  return {std::move(v)};
}

// ---- captioner -------------------------------------------------------------

StubCaptioner::StubCaptioner(BackendConfig config)
    : Captioner(std::move(config)),
      default_caption_(this->config().settings.value("default_caption", std::string("an image"))),
      fixture_(load_stub_fixture(this->config())) {
  if (default_caption_.empty()) throw ConfigError("stub captioner: empty default_caption");
}

std::string StubCaptioner::do_caption(const ImageRef& image) const {
  const std::string digest = image_content_digest(load_image(image));
  if (const json* c = lookup(fixture_, "captions", digest)) return c->get<std::string>();
  return default_caption_;
}

// ---- detector --------------------------------------------------------------

StubDetector::StubDetector(BackendConfig config)
    : Detector(std::move(config)),
      seed_(seed_of(this->config())),
      synthesize_(this->config().settings.value("synthesize", false)),
      max_objects_(this->config().settings.value("max_objects", 6)),
      fixture_(load_stub_fixture(this->config())) {}

std::vector<DetectedObject> StubDetector::do_detect(const ImageRef& image) const {
  const Image img = load_image(image);
  const std::string digest = image_content_digest(img);
  if (const json* d = lookup(fixture_, "detections", digest))
    return d->get<std::vector<DetectedObject>>();
  if (!synthesize_ || max_objects_ <= 0) return {};

  const auto head = stub_expand("detector/count", seed_, digest, 1);
  const int n = static_cast<int>((head[0] + 1.0) / 2.0 * (max_objects_ + 1));
  std::vector<DetectedObject> out;
  for (int i = 0; i < n; ++i) {
    const auto r = stub_expand("detector/object", seed_, digest + "#" + std::to_string(i), 7);
    auto unit = [&](int k) { return (r[k] + 1.0) / 2.0; };
    DetectedObject o;
    o.category = std::string(kSynthCategories[static_cast<std::size_t>(unit(0) * kSynthCategories.size()) %
                                              kSynthCategories.size()]);
    const auto attr = static_cast<std::size_t>(unit(1) * (kSynthAttributes.size() + 1));
    if (attr < kSynthAttributes.size()) o.attribute = std::string(kSynthAttributes[attr]);
    const double w = std::max(1.0, unit(2) * img.width * 0.6);
    const double h = std::max(1.0, unit(3) * img.height * 0.6);
    o.box = Box{std::floor(unit(4) * (img.width - w)), std::floor(unit(5) * (img.height - h)),
                std::ceil(w), std::ceil(h)};
    o.confidence = 0.5 + 0.5 * unit(6);
    out.push_back(std::move(o));
  }
  return out;
}

// ---- answer scorer ---------------------------------------------------------

StubAnswerScorer::StubAnswerScorer(BackendConfig config)
    : AnswerScorer(std::move(config)),
      seed_(seed_of(this->config())),
      fixture_(load_stub_fixture(this->config())) {}

std::optional<std::string> StubAnswerScorer::to_declarative(std::string_view question) const {
  if (const json* t = lookup(fixture_, "conversions", std::string(question)))
    return t->get<std::string>();
  return std::nullopt;
}

std::vector<double> StubAnswerScorer::do_score(std::string_view tmpl,
                                               std::span<const std::string> candidates) const {
  const json* per_template = lookup(fixture_, "template_scores", std::string(tmpl));
  std::vector<double> scores;
  scores.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (per_template != nullptr && per_template->contains(c)) {
      scores.push_back((*per_template)[c].get<double>());
    } else if (const json* s = lookup(fixture_, "answer_scores", c)) {
      scores.push_back(s->get<double>());
    } else {
      const std::string key = std::string(tmpl) + '\0' + c;
      scores.push_back((stub_expand("scorer", seed_, key, 1)[0] - 1.0) * 5.0);
    }
  }
  return scores;
}

}  // namespace unifine
