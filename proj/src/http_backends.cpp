#include "unifine/http_backends.hpp"

#include <fstream>
#include <sstream>

#include <httplib.h>

#include "unifine/errors.hpp"

namespace unifine {

namespace {

class HttpEndpoint {
 public:
  explicit HttpEndpoint(const BackendConfig& config)
      : url_(config.settings.value("url", std::string())),
        prefix_(config.settings.value("prefix", std::string())),
        timeout_s_(config.settings.value("timeout_s", 120)) {
    if (url_.empty())
      throw ConfigError("http " + std::string(to_string(config.role)) + ": missing 'url' setting");
  }

  json post(const std::string& endpoint, const json& body) const {
    // httplib::Client is not safe for concurrent use; one per call.
    httplib::Client client(url_);
    client.set_connection_timeout(timeout_s_);
    client.set_read_timeout(timeout_s_);
    client.set_write_timeout(timeout_s_);
    const std::string path = prefix_ + "/" + endpoint;
    auto res = client.Post(path, body.dump(), "application/json");
    if (!res)
      throw BackendError("POST " + url_ + path + " failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw BackendError("POST " + url_ + path + " returned HTTP " + std::to_string(res->status) +
                         ": " + res->body);
    try {
      return json::parse(res->body);
    } catch (const json::exception& e) {
      throw BackendError("POST " + url_ + path + ": malformed JSON response: " + e.what());
    }
  }

 private:
  std::string url_;
  std::string prefix_;
  int timeout_s_;
};

json image_body(const ImageRef& image) {
  json body{{"image", image.path.string()}, {"crop", nullptr}};
  if (image.crop) body["crop"] = {image.crop->x, image.crop->y, image.crop->w, image.crop->h};
  return body;
}

std::vector<double> vector_field(const json& res, std::string_view op) {
  try {
    return res.at("vector").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw BackendError(std::string(op) + ": response has no numeric 'vector': " + e.what());
  }
}

std::size_t required_dim(const BackendConfig& c) {
  const auto d = c.settings.value("dim", std::size_t{0});
  if (d == 0)
    throw ConfigError("http " + std::string(to_string(c.role)) + ": 'dim' setting is required");
  return d;
}

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size()))
    s.replace(pos, from.size(), to);
  return s;
}

class HttpJointEmbedder final : public JointEmbedder {
 public:
  explicit HttpJointEmbedder(BackendConfig config)
      : JointEmbedder(std::move(config)), http_(this->config()), dim_(required_dim(this->config())) {}
  std::size_t dim() const override { return dim_; }

 protected:
  JointVector do_embed_image(const ImageRef& image) const override {
    return {vector_field(http_.post("embed_image", image_body(image)), "embed_image")};
  }
  JointVector do_embed_text(std::string_view text) const override {
    return {vector_field(http_.post("embed_text", json{{"text", text}}), "embed_text")};
  }

 private:
  HttpEndpoint http_;
  std::size_t dim_;
};

class HttpSentenceEmbedder final : public SentenceEmbedder {
 public:
  explicit HttpSentenceEmbedder(BackendConfig config)
      : SentenceEmbedder(std::move(config)), http_(this->config()), dim_(required_dim(this->config())) {}
  std::size_t dim() const override { return dim_; }

 protected:
  SentVector do_embed(std::string_view text) const override {
    return {vector_field(http_.post("embed", json{{"text", text}}), "sentence_embed")};
  }

 private:
  HttpEndpoint http_;
  std::size_t dim_;
};

class HttpCaptioner final : public Captioner {
 public:
  explicit HttpCaptioner(BackendConfig config) : Captioner(std::move(config)), http_(this->config()) {}

 protected:
  std::string do_caption(const ImageRef& image) const override {
    const json res = http_.post("caption", image_body(image));
    if (!res.contains("caption") || !res["caption"].is_string())
      throw BackendError("caption: response has no 'caption' string");
    return res["caption"].get<std::string>();
  }

 private:
  HttpEndpoint http_;
};

class HttpDetector final : public Detector {
 public:
  explicit HttpDetector(BackendConfig config) : Detector(std::move(config)), http_(this->config()) {}

 protected:
  std::vector<DetectedObject> do_detect(const ImageRef& image) const override {
    const json res = http_.post("detect", image_body(image));
    try {
      return res.at("objects").get<std::vector<DetectedObject>>();
    } catch (const std::exception& e) {
      throw BackendError(std::string("detect: malformed 'objects': ") + e.what());
    }
  }

 private:
  HttpEndpoint http_;
};

class HttpAnswerScorer final : public AnswerScorer {
 public:
  explicit HttpAnswerScorer(BackendConfig config)
      : AnswerScorer(std::move(config)),
        http_(this->config()),
        mask_token_(this->config().settings.value("mask_token", std::string("<extra_id_0>"))) {
    const auto demo_path = this->config().settings.value("demonstrations", std::string());
    if (!demo_path.empty()) {
      std::ifstream in(demo_path);
      if (!in) throw ConfigError("cannot open demonstrations: " + demo_path);
      std::stringstream ss;
      ss << in.rdbuf();
      demonstrations_ = ss.str();
    }
  }

  std::optional<std::string> to_declarative(std::string_view question) const override {
    if (!demonstrations_) return std::nullopt;
    const std::string prompt = *demonstrations_ + "Question: " + std::string(question) + "\nTemplate:";
    const json res = http_.post("convert", json{{"question", question}, {"prompt", prompt}});
    if (!res.contains("template") || !res["template"].is_string())
      throw BackendError("convert: response has no 'template' string");
    return replace_all(res["template"].get<std::string>(), mask_token_, kSlotMarker);
  }

 protected:
  std::vector<double> do_score(std::string_view tmpl,
                               std::span<const std::string> candidates) const override {
    const json body{{"template", replace_all(std::string(tmpl), kSlotMarker, mask_token_)},
                    {"candidates", candidates}};
    const json res = http_.post("score", body);
    std::vector<std::vector<double>> per_token;
    try {
      per_token = res.at("token_logprobs").get<std::vector<std::vector<double>>>();
    } catch (const json::exception& e) {
      throw BackendError(std::string("score: malformed 'token_logprobs': ") + e.what());
    }
    std::vector<double> scores;
    scores.reserve(per_token.size());
    for (const auto& lps : per_token) {
      if (lps.empty()) throw BackendError("score: candidate with no tokens");
      scores.push_back(length_normalized_score(lps));
    }
    return scores;
  }

 private:
  HttpEndpoint http_;
  std::string mask_token_;
  std::optional<std::string> demonstrations_;
};

}  // namespace

void register_http_backends(BackendRegistry& r) {
  r.add(BackendRole::JointEmbedder, "http",
        [](const BackendConfig& c) { return std::make_shared<HttpJointEmbedder>(c); });
  r.add(BackendRole::SentenceEmbedder, "http",
        [](const BackendConfig& c) { return std::make_shared<HttpSentenceEmbedder>(c); });
  r.add(BackendRole::Captioner, "http",
        [](const BackendConfig& c) { return std::make_shared<HttpCaptioner>(c); });
  r.add(BackendRole::Detector, "http",
        [](const BackendConfig& c) { return std::make_shared<HttpDetector>(c); });
  r.add(BackendRole::AnswerScorer, "http",
        [](const BackendConfig& c) { return std::make_shared<HttpAnswerScorer>(c); });
}

}  // namespace unifine
