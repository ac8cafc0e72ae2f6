#include "unifine/backends.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>

#include "unifine/digest.hpp"
#include "unifine/errors.hpp"
#include "unifine/http_backends.hpp"
#include "unifine/stub_backends.hpp"

namespace unifine {

double alignment_score(const JointVector& image, const JointVector& text) {
  if (image.dim() != text.dim())
    throw ContractError("alignment_score: dimension mismatch " + std::to_string(image.dim()) +
                        " vs " + std::to_string(text.dim()));
  double dot = 0.0;
  for (std::size_t i = 0; i < image.values.size(); ++i) dot += image.values[i] * text.values[i];
  return dot;
}

double cosine(const SentVector& a, const SentVector& b) {
  if (a.dim() != b.dim())
    throw ContractError("cosine: dimension mismatch " + std::to_string(a.dim()) + " vs " +
                        std::to_string(b.dim()));
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) throw ContractError("cosine: zero-norm operand");
  const double c = dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(c, -1.0, 1.0);
}

namespace {

constexpr std::array<std::string_view, 5> kRoleNames = {
    "joint_embedder", "sentence_embedder", "captioner", "detector", "answer_scorer"};

void require_text(std::string_view text, std::string_view op) {
  if (text.empty()) throw InputError(std::string(op) + ": empty text");
}

}  // namespace

std::string_view to_string(BackendRole role) { return kRoleNames[static_cast<std::size_t>(role)]; }

BackendRole parse_backend_role(std::string_view name) {
  for (std::size_t i = 0; i < kRoleNames.size(); ++i)
    if (kRoleNames[i] == name) return static_cast<BackendRole>(i);
  throw ConfigError("unknown backend role: " + std::string(name));
}

std::string BackendConfig::identity() const {
  std::string id = implementation + "@" + version;
  if (normalize) id += "+l2";
  Sha256 h;
  h.update(settings.dump());
  if (auto it = settings.find("fixture"); it != settings.end() && it->is_string())
    h.update(file_sha256_hex(it->get<std::string>()));
  return id + ":" + h.hex_digest().substr(0, 12);
}

// ---- role front ends -------------------------------------------------------

JointVector JointEmbedder::finish(JointVector v) const {
  if (v.dim() != dim())
    throw BackendError("joint embedder returned dim " + std::to_string(v.dim()) + ", expected " +
                       std::to_string(dim()));
  if (!decorator() && config().normalize) {
    double n = 0.0;
    for (double x : v.values) n += x * x;
    n = std::sqrt(n);
    if (n > 0.0)
      for (double& x : v.values) x /= n;
  }
  return v;
}

JointVector JointEmbedder::embed_image(const ImageRef& image) const {
  return finish(do_embed_image(image));
}

JointVector JointEmbedder::embed_text(std::string_view text) const {
  require_text(text, "embed_text");
  return finish(do_embed_text(text));
}

SentVector SentenceEmbedder::embed(std::string_view text) const {
  require_text(text, "sentence_embed");
  SentVector v = do_embed(text);
  if (v.dim() != dim())
    throw BackendError("sentence embedder returned dim " + std::to_string(v.dim()) +
                       ", expected " + std::to_string(dim()));
  return v;
}

std::string Captioner::caption(const ImageRef& image) const {
  std::string c = do_caption(image);
  if (c.empty()) throw BackendError("captioner returned empty caption for " + image.str());
  return c;
}

std::vector<DetectedObject> Detector::detect(const ImageRef& image) const {
  std::vector<DetectedObject> objs = do_detect(image);
  if (decorator()) return objs;
  const ImageSize size = image_size(image);
  std::vector<DetectedObject> kept;
  kept.reserve(objs.size());
  for (auto& o : objs) {
    if (o.category.empty()) throw BackendError("detector returned an empty category");
    o.box = clamp_box(o.box, size.width, size.height);
    o.confidence = std::clamp(o.confidence, 0.0, 1.0);
    if (o.box.w > 0 && o.box.h > 0) kept.push_back(std::move(o));
  }
  return kept;
}

std::size_t count_slots(std::string_view text) {
  std::size_t n = 0;
  for (auto pos = text.find(kSlotMarker); pos != std::string_view::npos;
       pos = text.find(kSlotMarker, pos + kSlotMarker.size()))
    ++n;
  return n;
}

std::vector<double> AnswerScorer::score_answers(std::string_view declarative_template,
                                                std::span<const std::string> candidates) const {
  if (count_slots(declarative_template) != 1)
    throw ContractError("score_answers: template must contain exactly one " +
                        std::string(kSlotMarker) + ": '" + std::string(declarative_template) + "'");
  if (candidates.empty()) throw ContractError("score_answers: no candidates");
  std::vector<double> scores = do_score(declarative_template, candidates);
  if (scores.size() != candidates.size())
    throw BackendError("answer scorer returned " + std::to_string(scores.size()) +
                       " scores for " + std::to_string(candidates.size()) + " candidates");
  for (double s : scores)
    if (!std::isfinite(s)) throw BackendError("answer scorer returned a non-finite score");
  return scores;
}

std::optional<std::string> AnswerScorer::to_declarative(std::string_view) const {
  return std::nullopt;
}

double length_normalized_score(std::span<const double> token_logprobs) {
  if (token_logprobs.empty()) throw ContractError("length_normalized_score: no tokens");
  double sum = 0.0;
  for (double lp : token_logprobs) sum += lp;
  return sum / static_cast<double>(token_logprobs.size());
}

// ---- serial decorators -----------------------------------------------------

namespace {

class SerialJoint final : public JointEmbedder {
 public:
  explicit SerialJoint(std::shared_ptr<const JointEmbedder> inner)
      : JointEmbedder(inner->config(), true), inner_(std::move(inner)) {}
  std::size_t dim() const override { return inner_->dim(); }

 protected:
  JointVector do_embed_image(const ImageRef& image) const override {
    std::lock_guard lock(mu_);
    return inner_->embed_image(image);
  }
  JointVector do_embed_text(std::string_view text) const override {
    std::lock_guard lock(mu_);
    return inner_->embed_text(text);
  }

 private:
  std::shared_ptr<const JointEmbedder> inner_;
  mutable std::mutex mu_;
};

class SerialSentence final : public SentenceEmbedder {
 public:
  explicit SerialSentence(std::shared_ptr<const SentenceEmbedder> inner)
      : SentenceEmbedder(inner->config(), true), inner_(std::move(inner)) {}
  std::size_t dim() const override { return inner_->dim(); }

 protected:
  SentVector do_embed(std::string_view text) const override {
    std::lock_guard lock(mu_);
    return inner_->embed(text);
  }

 private:
  std::shared_ptr<const SentenceEmbedder> inner_;
  mutable std::mutex mu_;
};

class SerialCaptioner final : public Captioner {
 public:
  explicit SerialCaptioner(std::shared_ptr<const Captioner> inner)
      : Captioner(inner->config(), true), inner_(std::move(inner)) {}

 protected:
  std::string do_caption(const ImageRef& image) const override {
    std::lock_guard lock(mu_);
    return inner_->caption(image);
  }

 private:
  std::shared_ptr<const Captioner> inner_;
  mutable std::mutex mu_;
};

class SerialDetector final : public Detector {
 public:
  explicit SerialDetector(std::shared_ptr<const Detector> inner)
      : Detector(inner->config(), true), inner_(std::move(inner)) {}

 protected:
  std::vector<DetectedObject> do_detect(const ImageRef& image) const override {
    std::lock_guard lock(mu_);
    return inner_->detect(image);
  }

 private:
  std::shared_ptr<const Detector> inner_;
  mutable std::mutex mu_;
};

class SerialScorer final : public AnswerScorer {
 public:
  explicit SerialScorer(std::shared_ptr<const AnswerScorer> inner)
      : AnswerScorer(inner->config(), true), inner_(std::move(inner)) {}
  std::optional<std::string> to_declarative(std::string_view question) const override {
    std::lock_guard lock(mu_);
    return inner_->to_declarative(question);
  }

 protected:
  std::vector<double> do_score(std::string_view tmpl,
                               std::span<const std::string> candidates) const override {
    std::lock_guard lock(mu_);
    return inner_->score_answers(tmpl, candidates);
  }

 private:
  std::shared_ptr<const AnswerScorer> inner_;
  mutable std::mutex mu_;
};

template <typename Role>
std::shared_ptr<const Role> as_role(const std::shared_ptr<Backend>& b) {
  auto r = std::dynamic_pointer_cast<const Role>(b);
  if (!r)
    throw ConfigError("backend '" + b->config().implementation + "' does not implement role " +
                      std::string(to_string(b->config().role)));
  return r;
}

}  // namespace

std::shared_ptr<Backend> make_serial(std::shared_ptr<Backend> inner) {
  switch (inner->config().role) {
    case BackendRole::JointEmbedder:
      return std::make_shared<SerialJoint>(as_role<JointEmbedder>(inner));
    case BackendRole::SentenceEmbedder:
      return std::make_shared<SerialSentence>(as_role<SentenceEmbedder>(inner));
    case BackendRole::Captioner:
      return std::make_shared<SerialCaptioner>(as_role<Captioner>(inner));
    case BackendRole::Detector:
      return std::make_shared<SerialDetector>(as_role<Detector>(inner));
    case BackendRole::AnswerScorer:
      return std::make_shared<SerialScorer>(as_role<AnswerScorer>(inner));
  }
  throw ContractError("unknown backend role");
}

// ---- registry --------------------------------------------------------------

BackendRegistry BackendRegistry::with_builtins() {
  BackendRegistry r;
  r.add(BackendRole::JointEmbedder, "stub",
        [](const BackendConfig& c) { return std::make_shared<StubJointEmbedder>(c); });
  r.add(BackendRole::SentenceEmbedder, "stub",
        [](const BackendConfig& c) { return std::make_shared<StubSentenceEmbedder>(c); });
  r.add(BackendRole::Captioner, "stub",
        [](const BackendConfig& c) { return std::make_shared<StubCaptioner>(c); });
  r.add(BackendRole::Detector, "stub",
        [](const BackendConfig& c) { return std::make_shared<StubDetector>(c); });
  r.add(BackendRole::AnswerScorer, "stub",
        [](const BackendConfig& c) { return std::make_shared<StubAnswerScorer>(c); });
  register_http_backends(r);
  return r;
}

void BackendRegistry::add(BackendRole role, std::string implementation, Factory factory) {
  factories_[{role, std::move(implementation)}] = std::move(factory);
}

bool BackendRegistry::contains(BackendRole role, const std::string& implementation) const {
  return factories_.count({role, implementation}) != 0;
}

std::shared_ptr<Backend> BackendRegistry::make(const BackendConfig& config) const {
  if (config.implementation.empty())
    throw ConfigError("backend " + std::string(to_string(config.role)) + ": empty implementation id");
  auto it = factories_.find({config.role, config.implementation});
  if (it == factories_.end())
    throw ConfigError("no implementation '" + config.implementation + "' for role " +
                      std::string(to_string(config.role)));
  std::shared_ptr<Backend> b = it->second(config);
  if (config.serial) b = make_serial(std::move(b));
  return b;
}

Backends BackendRegistry::make_all(const std::map<BackendRole, BackendConfig>& configs) const {
  Backends out;
  for (const auto& [role, cfg] : configs) {
    if (cfg.role != role) throw ConfigError("backend config role mismatch");
    auto b = make(cfg);
    switch (role) {
      case BackendRole::JointEmbedder:
        out.joint = as_role<JointEmbedder>(b);
        break;
      case BackendRole::SentenceEmbedder:
        out.sentence = as_role<SentenceEmbedder>(b);
        break;
      case BackendRole::Captioner:
        out.captioner = as_role<Captioner>(b);
        break;
      case BackendRole::Detector:
        out.detector = as_role<Detector>(b);
        break;
      case BackendRole::AnswerScorer:
        out.scorer = as_role<AnswerScorer>(b);
        break;
    }
  }
  return out;
}

}  // namespace unifine
