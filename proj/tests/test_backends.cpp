#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

#include <httplib.h>

#include "support.hpp"
#include "unifine/backends.hpp"
#include "unifine/errors.hpp"
#include "unifine/image.hpp"
#include "unifine/stub_backends.hpp"

using namespace unifine;

namespace {

double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double vec_cosine(const std::vector<double>& a, const std::vector<double>& b) {
  return cosine(SentVector{a}, SentVector{b});
}

struct Images {
  testing::TempDir dir;
  ImageRef a, b, empty;
  Images() {
    write_image(dir / "a.png", testing::gradient_image(10, 10));
    write_image(dir / "b.png", testing::solid_image(12, 8, 200, 10, 10));
    write_image(dir / "empty.png", testing::solid_image(4, 4, 0, 0, 0));
    a = ImageRef::parse((dir / "a.png").string());
    b = ImageRef::parse((dir / "b.png").string());
    empty = ImageRef::parse((dir / "empty.png").string());
  }
  std::string digest(const ImageRef& r) const { return image_content_digest(load_image(r)); }
};

template <typename T>
std::shared_ptr<const T> make(BackendRole role, json settings = json::object(), bool serial = false,
                              bool normalize = false) {
  BackendConfig c = testing::stub_config(role, std::move(settings));
  c.serial = serial;
  c.normalize = normalize;
  return std::dynamic_pointer_cast<const T>(BackendRegistry::with_builtins().make(c));
}

}  // namespace

TEST_SUITE("backends") {
  TEST_CASE("alignment score and cosine by hand") {
    CHECK(alignment_score(JointVector{{1, 2}}, JointVector{{3, 4}}) == 11);
    CHECK(alignment_score(JointVector{{1, 1}}, JointVector{{1, 1}}) == 2);
    CHECK(alignment_score(JointVector{{1, 0}}, JointVector{{0, 1}}) == 0);
    CHECK_THROWS_AS(alignment_score(JointVector{{1}}, JointVector{{1, 2}}), ContractError);

    CHECK(cosine(SentVector{{1, 1}}, SentVector{{1, 0}}) == doctest::Approx(0.70710678).epsilon(1e-6));
    CHECK(cosine(SentVector{{1, 0}}, SentVector{{0, 1}}) == 0);
    CHECK(cosine(SentVector{{3, 4}}, SentVector{{3, 4}}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(cosine(SentVector{{0, 0}}, SentVector{{1, 0}}), ContractError);
    CHECK_THROWS_AS(cosine(SentVector{{1}}, SentVector{{1, 0}}), ContractError);
  }

  TEST_CASE("symmetry and range over random vectors") {
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> u(-5, 5);
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t d = 1 + gen() % 12;
      std::vector<double> a(d), b(d);
      for (auto& x : a) x = u(gen);
      for (auto& x : b) x = u(gen);
      if (norm(a) == 0 || norm(b) == 0) continue;
      CHECK(std::abs(alignment_score({a}, {b}) - alignment_score({b}, {a})) <= 1e-9);
      const double c = cosine({a}, {b});
      CHECK(std::abs(c - cosine({b}, {a})) <= 1e-9);
      CHECK(c >= -1 - 1e-9);
      CHECK(c <= 1 + 1e-9);
    }
  }

  TEST_CASE("stub expansion is pinned") {
    // Seed = first 8 bytes of SHA-256("sha256-mt19937_64/v1\0joint/text\0" + be64(0) + "x"),
    // computed outside this code base.
    std::mt19937_64 gen(14270522137185286264ull);
    const double first = static_cast<double>(gen() >> 11) * 0x1.0p-53 * 2.0 - 1.0;
    const auto v = stub_expand("joint/text", 0, "x", 4);
    CHECK(v[0] == first);
    CHECK(v[0] == 0x1.f650621b556d8p-2);
    CHECK(v[3] == 0x1.d4c4c4570b9ccp-2);
    for (double x : stub_expand("any", 9, "input", 64)) {
      CHECK(x >= -1.0);
      CHECK(x < 1.0);
    }
    CHECK(stub_expand("a", 0, "x", 3) != stub_expand("b", 0, "x", 3));
    CHECK(stub_expand("a", 0, "x", 3) != stub_expand("a", 1, "x", 3));
  }

  TEST_CASE("stub joint embedder") {
    Images img;
    auto joint = make<JointEmbedder>(BackendRole::JointEmbedder);
    REQUIRE(joint);
    const auto va = joint->embed_image(img.a);
    CHECK(va.dim() == 16);
    CHECK(joint->embed_image(img.a) == va);
    CHECK(vec_cosine(va.values, joint->embed_image(img.b).values) < 1.0);
    CHECK(va.values == stub_expand("joint/image", 0, img.digest(img.a), 16));

    CHECK(joint->embed_text("a dog") == joint->embed_text("a dog"));
    CHECK(joint->embed_text("x").values == stub_expand("joint/text", 0, "x", 16));
    CHECK(joint->embed_text("x").dim() == va.dim());
    CHECK_THROWS_AS(joint->embed_text(""), InputError);

    auto other_seed = make<JointEmbedder>(BackendRole::JointEmbedder, {{"seed", 5}});
    CHECK(other_seed->embed_text("x") != joint->embed_text("x"));

    auto normalized = make<JointEmbedder>(BackendRole::JointEmbedder, {{"dim", 8}}, false, true);
    CHECK(norm(normalized->embed_text("a dog").values) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(normalized->dim() == 8);
  }

  TEST_CASE("unreadable image names the locator") {
    auto joint = make<JointEmbedder>(BackendRole::JointEmbedder);
    try {
      joint->embed_image(ImageRef::parse("/nonexistent/pic.jpg"));
      FAIL("expected InputError");
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find("/nonexistent/pic.jpg") != std::string::npos);
    }
  }

  TEST_CASE("canned joint vectors") {
    Images img;
    const json fixture = {{"joint_images", {{img.digest(img.a), {1.0, 0.0}}}},
                          {"joint_texts", {{"a dog", {0.5, 0.5}}}}};
    auto joint = make<JointEmbedder>(BackendRole::JointEmbedder, {{"dim", 2}, {"fixture_data", fixture}});
    CHECK(joint->embed_image(img.a).values == std::vector<double>{1.0, 0.0});
    CHECK(joint->embed_text("a dog").values == std::vector<double>{0.5, 0.5});
    auto wrong_dim = make<JointEmbedder>(BackendRole::JointEmbedder, {{"dim", 3}, {"fixture_data", fixture}});
    CHECK_THROWS_AS(wrong_dim->embed_text("a dog"), BackendError);
  }

  TEST_CASE("stub sentence embedder") {
    auto sent = make<SentenceEmbedder>(BackendRole::SentenceEmbedder, {{"dim", 8}});
    const auto v = sent->embed("a dog");
    CHECK(v.dim() == 8);
    CHECK(sent->embed("a dog") == v);
    CHECK(sent->embed("dog, a") == v);
    CHECK(norm(sent->embed("!!!").values) > 0);
    CHECK_THROWS_AS(sent->embed(""), InputError);
    CHECK(cosine(sent->embed("a red dog"), sent->embed("a red dog runs")) >
          cosine(sent->embed("a red dog"), sent->embed("pizza on table")));

    auto hashed = make<SentenceEmbedder>(BackendRole::SentenceEmbedder, {{"dim", 8}, {"mode", "hash"}});
    CHECK(hashed->embed("a dog") != hashed->embed("dog a"));
  }

  TEST_CASE("stub captioner") {
    Images img;
    auto cap = make<Captioner>(BackendRole::Captioner,
                               {{"fixture_data", {{"captions", {{img.digest(img.a), "a pizza on a table"}}}}}});
    CHECK(cap->caption(img.a) == "a pizza on a table");
    CHECK(cap->caption(img.b) == "an image");
    CHECK_THROWS_AS(cap->caption(ImageRef::parse("/missing.png")), InputError);
  }

  TEST_CASE("stub detector") {
    Images img;
    const json canned = json::array({{{"box", {1, 2, 3, 4}},
                                      {"category", "dog"},
                                      {"attribute", "brown"},
                                      {"confidence", 0.9}}});
    const json clamped = json::array({{{"box", {-5, 2, 30, 30}},
                                       {"category", "sky"},
                                       {"confidence", 1.0}}});
    auto det = make<Detector>(BackendRole::Detector,
                              {{"fixture_data", {{"detections", {{img.digest(img.a), canned},
                                                                 {img.digest(img.b), clamped}}}}}});
    const auto objs = det->detect(img.a);
    REQUIRE(objs.size() == 1);
    CHECK(objs[0] == DetectedObject{Box{1, 2, 3, 4}, "dog", "brown", 0.9});
    CHECK(det->detect(img.empty).empty());
    const auto c = det->detect(img.b);
    REQUIRE(c.size() == 1);
    CHECK(c[0].box == Box{0, 2, 12, 6});

    auto synth = make<Detector>(BackendRole::Detector, {{"synthesize", true}, {"max_objects", 6}});
    for (const ImageRef& r : {img.a, img.b}) {
      const auto out = synth->detect(r);
      CHECK(out == synth->detect(r));
      const auto size = image_size(r);
      for (const auto& o : out) {
        CHECK_FALSE(o.category.empty());
        CHECK(o.box.x >= 0);
        CHECK(o.box.y >= 0);
        CHECK(o.box.x + o.box.w <= size.width);
        CHECK(o.box.y + o.box.h <= size.height);
        CHECK(o.confidence >= 0);
        CHECK(o.confidence <= 1);
      }
    }
  }

  TEST_CASE("stub answer scorer") {
    auto scorer = make<AnswerScorer>(BackendRole::AnswerScorer,
                                     {{"fixture_data", {{"answer_scores", {{"yes", -1.0}, {"no", -2.5}}}}}});
    const std::vector<std::string> c = {"yes", "no"};
    CHECK(scorer->score_answers("There is <slot> dog", c) == std::vector<double>{-1.0, -2.5});
    CHECK(scorer->score_answers("It is <slot>", std::vector<std::string>{"blue"}).size() == 1);
    CHECK_THROWS_AS(scorer->score_answers("no slot here", c), ContractError);
    CHECK_THROWS_AS(scorer->score_answers("<slot> and <slot>", c), ContractError);
    CHECK_THROWS_AS(scorer->score_answers("<slot>", std::vector<std::string>{}), ContractError);

    std::vector<std::string> words = {"red", "blue", "green", "white", "two", "pizza"};
    const auto base = scorer->score_answers("The color is <slot>", words);
    for (double s : base) CHECK(std::isfinite(s));
    std::vector<std::size_t> perm = {3, 0, 5, 1, 4, 2};
    std::vector<std::string> permuted;
    for (auto i : perm) permuted.push_back(words[i]);
    const auto shuffled = scorer->score_answers("The color is <slot>", permuted);
    for (std::size_t i = 0; i < perm.size(); ++i) CHECK(shuffled[i] == base[perm[i]]);
  }

  TEST_CASE("length normalized score") {
    const std::vector<double> lps = {-1.0, -3.0};
    CHECK(length_normalized_score(lps) == -2.0);
  }

  TEST_CASE("registry, identity and serial wrapper") {
    auto reg = BackendRegistry::with_builtins();
    CHECK(reg.contains(BackendRole::Detector, "stub"));
    CHECK(reg.contains(BackendRole::Detector, "http"));
    BackendConfig c = testing::stub_config(BackendRole::Captioner);
    c.implementation = "nope";
    CHECK_THROWS_AS(reg.make(c), ConfigError);

    BackendConfig v1 = testing::stub_config(BackendRole::JointEmbedder);
    BackendConfig v2 = v1;
    v2.version = "2";
    CHECK(v1.identity() != v2.identity());
    CHECK(v1.identity() == testing::stub_config(BackendRole::JointEmbedder).identity());

    auto plain = make<JointEmbedder>(BackendRole::JointEmbedder, {{"dim", 4}}, false, true);
    auto serial = make<JointEmbedder>(BackendRole::JointEmbedder, {{"dim", 4}}, true, true);
    CHECK(serial->embed_text("hello") == plain->embed_text("hello"));

    std::vector<JointVector> out(8);
    {
      std::vector<std::jthread> threads;
      for (std::size_t i = 0; i < out.size(); ++i)
        threads.emplace_back([&, i] { out[i] = serial->embed_text("same text"); });
    }
    for (const auto& v : out) CHECK(v == out[0]);

    auto all = testing::stub_backends();
    CHECK(all.joint);
    CHECK(all.scorer);
    const auto some = reg.make_all({{BackendRole::Captioner, testing::stub_config(BackendRole::Captioner)}});
    CHECK(some.captioner);
    CHECK_FALSE(some.joint);
  }
}

TEST_SUITE("image") {
  TEST_CASE("locator parsing") {
    const auto r = ImageRef::parse("dir/pic.jpg#crop=1,2,3,4");
    CHECK(r.path == "dir/pic.jpg");
    REQUIRE(r.crop);
    CHECK(*r.crop == PixelRect{1, 2, 3, 4});
    CHECK(r.str() == "dir/pic.jpg#crop=1,2,3,4");
    CHECK_FALSE(ImageRef::parse("plain.png").crop);
    CHECK_THROWS_AS(ImageRef::parse("x.png#crop=1,2,3"), InputError);
    CHECK_THROWS_AS(ImageRef::parse("x.png#crop=1,2,3,a"), InputError);
  }

  TEST_CASE("crop pixels match the source") {
    testing::TempDir dir;
    write_image(dir / "g.png", testing::gradient_image(10, 10));
    const Image full = load_image(ImageRef::parse((dir / "g.png").string()));
    CHECK(full.width == 10);
    CHECK(full.at(7, 4, 2) == 11);
    const Image crop = load_image(ImageRef::parse((dir / "g.png").string() + "#crop=2,3,4,5"));
    CHECK(crop.width == 4);
    CHECK(crop.height == 5);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 4; ++x) {
        CHECK(crop.at(x, y, 0) == x + 2);
        CHECK(crop.at(x, y, 1) == y + 3);
        CHECK(crop.at(x, y, 2) == x + y + 5);
      }
    CHECK_THROWS_AS(load_image(ImageRef::parse((dir / "g.png").string() + "#crop=8,8,4,4")), InputError);
  }

  TEST_CASE("content digest depends on pixels only") {
    testing::TempDir dir;
    write_image(dir / "a.png", testing::solid_image(5, 5, 1, 2, 3));
    write_image(dir / "b.png", testing::solid_image(5, 5, 1, 2, 3));
    write_image(dir / "c.png", testing::solid_image(5, 5, 1, 2, 4));
    auto d = [&](const char* n) { return image_content_digest(load_image(ImageRef::parse((dir / n).string()))); };
    CHECK(d("a.png") == d("b.png"));
    CHECK(d("a.png") != d("c.png"));
    CHECK(d("a.png").size() == 16);
  }

  TEST_CASE("clamping to the pixel grid") {
    CHECK(clamp_to_pixels(Box{-2.5, 1.2, 5, 3}, 10, 10) == PixelRect{0, 1, 3, 4});
    CHECK(clamp_to_pixels(Box{2, 2, 3, 3}, 10, 10) == PixelRect{2, 2, 3, 3});
    CHECK_FALSE(clamp_to_pixels(Box{12, 0, 3, 3}, 10, 10));
    CHECK_FALSE(clamp_to_pixels(Box{2, 2, 0, 3}, 10, 10));
    CHECK(clamp_box(Box{-1, -1, 5, 20}, 10, 10) == Box{0, 0, 4, 10});
  }
}

TEST_SUITE("http_backends") {
  namespace {
  struct FakeServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;
    json last_body;
    std::mutex mu;

    FakeServer() {
      auto reply = [this](const char* endpoint, std::function<json(const json&)> f) {
        server.Post(std::string("/v1/") + endpoint, [this, f](const httplib::Request& req, httplib::Response& res) {
          const json body = json::parse(req.body);
          {
            std::lock_guard lock(mu);
            last_body = body;
          }
          res.set_content(f(body).dump(), "application/json");
        });
      };
      reply("embed_image", [](const json&) { return json{{"vector", {3.0, 4.0}}}; });
      reply("embed_text", [](const json& b) { return json{{"vector", {b["text"] == "a" ? 1.0 : 0.0, 2.0}}}; });
      reply("embed", [](const json&) { return json{{"vector", {0.0, 1.0, 0.0}}}; });
      reply("caption", [](const json&) { return json{{"caption", "a cat on a mat"}}; });
      reply("detect", [](const json&) {
        return json{{"objects", json::array({{{"box", {-2, 0, 5, 5}},
                                              {"category", "cat"},
                                              {"confidence", 0.8}}})}};
      });
      reply("score", [](const json& b) {
        json lps = json::array();
        for (std::size_t i = 0; i < b["candidates"].size(); ++i) lps.push_back({-1.0 * (i + 1), -3.0 * (i + 1)});
        return json{{"token_logprobs", lps}};
      });
      reply("convert", [](const json&) { return json{{"template", "The cat is <extra_id_0>"}}; });
      server.Post("/v1/broken", [](const httplib::Request&, httplib::Response& res) {
        res.status = 500;
        res.set_content("boom", "text/plain");
      });
      port = server.bind_to_any_port("127.0.0.1");
      thread = std::thread([this] { server.listen_after_bind(); });
      server.wait_until_ready();
    }
    ~FakeServer() {
      server.stop();
      thread.join();
    }
    json settings(json extra = json::object()) const {
      json s = {{"url", "http://127.0.0.1:" + std::to_string(port)}, {"prefix", "/v1"}, {"timeout_s", 5}};
      s.update(extra);
      return s;
    }
  };

  template <typename T>
  std::shared_ptr<const T> http(BackendRole role, json settings, bool normalize = false) {
    BackendConfig c;
    c.role = role;
    c.implementation = "http";
    c.settings = std::move(settings);
    c.normalize = normalize;
    return std::dynamic_pointer_cast<const T>(BackendRegistry::with_builtins().make(c));
  }
  }  // namespace

  TEST_CASE("adapters speak the JSON protocol") {
    FakeServer srv;
    testing::TempDir dir;
    write_image(dir / "img.png", testing::gradient_image(4, 4));
    const auto ref = ImageRef::parse((dir / "img.png").string() + "#crop=0,0,2,2");

    auto joint = http<JointEmbedder>(BackendRole::JointEmbedder, srv.settings({{"dim", 2}}), true);
    const auto v = joint->embed_image(ref);
    CHECK(v.values[0] == doctest::Approx(0.6));
    CHECK(v.values[1] == doctest::Approx(0.8));
    CHECK(srv.last_body["crop"] == json({0, 0, 2, 2}));
    CHECK(joint->embed_text("a").dim() == 2);

    auto sent = http<SentenceEmbedder>(BackendRole::SentenceEmbedder, srv.settings({{"dim", 3}}));
    CHECK(sent->embed("x").values == std::vector<double>{0, 1, 0});
    auto wrong = http<SentenceEmbedder>(BackendRole::SentenceEmbedder, srv.settings({{"dim", 4}}));
    CHECK_THROWS_AS(wrong->embed("x"), BackendError);

    auto cap = http<Captioner>(BackendRole::Captioner, srv.settings());
    CHECK(cap->caption(ref) == "a cat on a mat");

    auto det = http<Detector>(BackendRole::Detector, srv.settings());
    const auto objs = det->detect(ref);
    REQUIRE(objs.size() == 1);
    CHECK(objs[0].box == Box{0, 0, 2, 2});

    auto scorer = http<AnswerScorer>(BackendRole::AnswerScorer, srv.settings());
    const auto scores = scorer->score_answers("It is <slot>", std::vector<std::string>{"red", "blue"});
    CHECK(scores == std::vector<double>{-2.0, -4.0});
    CHECK(srv.last_body["template"] == "It is <extra_id_0>");
    CHECK_FALSE(scorer->to_declarative("What is it?"));

    std::ofstream(dir / "demo.txt") << "Question: Is it red?\nTemplate: <extra_id_0>, it is red\n";
    auto converter =
        http<AnswerScorer>(BackendRole::AnswerScorer, srv.settings({{"demonstrations", (dir / "demo.txt").string()}}));
    CHECK(converter->to_declarative("What is the cat on?") == std::optional<std::string>("The cat is <slot>"));
    CHECK(srv.last_body["prompt"].get<std::string>().find("Is it red?") != std::string::npos);
  }

  TEST_CASE("transport failures become backend errors") {
    FakeServer srv;
    auto broken = http<Captioner>(BackendRole::Captioner, srv.settings({{"prefix", "/v1/broken#"}}));
    testing::TempDir dir;
    write_image(dir / "img.png", testing::gradient_image(4, 4));
    CHECK_THROWS_AS(broken->caption(ImageRef::parse((dir / "img.png").string())), BackendError);
    auto refused = http<Captioner>(BackendRole::Captioner, json{{"url", "http://127.0.0.1:1"}, {"timeout_s", 1}});
    CHECK_THROWS_AS(refused->caption(ImageRef::parse((dir / "img.png").string())), BackendError);
    CHECK_THROWS_AS(http<Captioner>(BackendRole::Captioner, json::object()), ConfigError);
  }
}
