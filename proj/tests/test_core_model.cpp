#include <doctest.h>

#include "support.hpp"
#include "unifine/core_model.hpp"
#include "unifine/errors.hpp"

using namespace unifine;

namespace {

Sample vcr_sample(std::size_t n_candidates) {
  Sample s;
  s.id = "vcr-1";
  s.task = TaskKind::VcrQ2A;
  s.image_ref = "img.png";
  s.query = "Why is Riley smiling?";
  for (std::size_t i = 0; i < n_candidates; ++i) s.candidates.push_back("answer " + std::to_string(i));
  s.reference = ChoiceReference{0};
  return s;
}

Sample vqa_sample() {
  Sample s;
  s.id = "42";
  s.task = TaskKind::VqaOther;
  s.image_ref = "coco.jpg#crop=1,2,3,4";
  s.query = "What is on the table?";
  s.reference = VqaReference{std::vector<std::string>(10, "pizza")};
  return s;
}

}  // namespace

TEST_SUITE("core_model") {
  TEST_CASE("task names round-trip") {
    for (auto t : {TaskKind::VqaYesNo, TaskKind::VqaNumber, TaskKind::VqaOther, TaskKind::VcrQ2A,
                   TaskKind::VcrQA2R, TaskKind::SnliVe})
      CHECK(parse_task_kind(to_string(t)) == t);
    CHECK(to_string(TaskKind::VqaYesNo) == "VQA_YESNO");
    CHECK(family_of(TaskKind::VcrQA2R) == TaskFamily::Vcr);
    CHECK_THROWS_AS(parse_task_kind("VQA"), InputError);
  }

  TEST_CASE("entailment labels parse short and long forms") {
    CHECK(parse_entailment_label("E") == EntailmentLabel::Entailment);
    CHECK(parse_entailment_label("contradiction") == EntailmentLabel::Contradiction);
    CHECK(parse_entailment_label("Neutral") == EntailmentLabel::Neutral);
    CHECK_THROWS_AS(parse_entailment_label("maybe"), InputError);
    CHECK(to_string(EntailmentLabel::Neutral) == "N");
  }

  TEST_CASE("validate_sample") {
    CHECK(validate_sample(vcr_sample(4)).empty());
    CHECK(validate_sample(vcr_sample(3)) == std::vector<std::string>{"candidate count 3 ≠ 4"});

    Sample ve;
    ve.id = "ve";
    ve.task = TaskKind::SnliVe;
    ve.image_ref = "x.jpg";
    ve.query = "A dog runs.";
    ve.candidates = {"extra"};
    ve.reference = EntailmentLabel::Entailment;
    CHECK(validate_sample(ve) == std::vector<std::string>{"SNLI-VE must have 0 candidates"});

    Sample q = vqa_sample();
    CHECK(validate_sample(q).empty());
    std::get<VqaReference>(q.reference).answers.pop_back();
    q.query.clear();
    CHECK(validate_sample(q).size() == 2);

    Sample qa2r = vcr_sample(4);
    qa2r.task = TaskKind::VcrQA2R;
    CHECK_FALSE(validate_sample(qa2r).empty());
    qa2r.gold_answer = "answer 0";
    CHECK(validate_sample(qa2r).empty());
  }

  TEST_CASE("validate_sample is pure") {
    const Sample s = vcr_sample(2);
    const Sample copy = s;
    CHECK(validate_sample(s) == validate_sample(s));
    CHECK(s == copy);
  }

  TEST_CASE("box checks") {
    Sample s = vcr_sample(4);
    s.provided_boxes = std::vector<DetectedObject>{{Box{0, 0, 5, 5}, "", std::nullopt, 0.5}};
    CHECK_FALSE(validate_sample(s).empty());
    (*s.provided_boxes)[0].category = "dog";
    (*s.provided_boxes)[0].confidence = 1.5;
    CHECK_FALSE(validate_sample(s).empty());
    (*s.provided_boxes)[0].confidence = 0.9;
    CHECK(validate_sample(s).empty());
  }

  TEST_CASE("sample JSON round trip keeps every field") {
    Sample s = vqa_sample();
    s.provided_caption = "a pizza on a table";
    s.provided_boxes = std::vector<DetectedObject>{{Box{1.5, 2, 3, 4}, "pizza", "hot", 0.75},
                                                   {Box{0, 0, 1, 1}, "table", std::nullopt, 1.0}};
    json j = s;
    CHECK(j.get<Sample>() == s);
    CHECK_FALSE(json(vqa_sample()).contains("provided_caption"));

    Sample v = vcr_sample(4);
    v.gold_answer = "answer 2";
    v.reference = ChoiceReference{2};
    CHECK(json(v).get<Sample>() == v);
  }

  TEST_CASE("samples JSONL load-serialize-load is a fixed point") {
    testing::TempDir dir;
    std::vector<Sample> samples = {vqa_sample(), vcr_sample(4)};
    Sample ve;
    ve.id = "ve-0";
    ve.task = TaskKind::SnliVe;
    ve.image_ref = "x.jpg";
    ve.query = "A dog runs.";
    ve.reference = EntailmentLabel::Contradiction;
    samples.push_back(ve);
    write_samples_jsonl(dir / "a.jsonl", samples);
    const auto once = read_samples_jsonl(dir / "a.jsonl");
    write_samples_jsonl(dir / "b.jsonl", once);
    CHECK(read_samples_jsonl(dir / "b.jsonl") == samples);
  }

  TEST_CASE("prediction JSON round trip") {
    Prediction p;
    p.sample_id = "s";
    p.task = TaskKind::VcrQ2A;
    p.label = std::size_t{3};
    p.answer = "d";
    p.candidates = {"a", "b", "c", "d"};
    p.bundle = ScoreBundle::zeros(4);
    p.totals = {0.1, 0.2, 0.3, 0.4};
    p.config_digest = "abc";
    CHECK(json(p).get<Prediction>() == p);

    Prediction e;
    e.sample_id = "v";
    e.task = TaskKind::SnliVe;
    e.label = EntailmentLabel::Neutral;
    e.entailment = EntailmentScores{0.25, -0.5};
    e.distances = {0.1, 0.0, 0.2};
    CHECK(json(e).get<Prediction>() == e);
  }

  TEST_CASE("centroid lookup and zero bundles") {
    const CentroidSet c{0.1, 0.2, 0.3};
    CHECK(c.at(EntailmentLabel::Contradiction) == 0.1);
    CHECK(c.at(EntailmentLabel::Entailment) == 0.3);
    const auto b = ScoreBundle::zeros(3);
    CHECK(b.size() == 3);
    CHECK(b.s_caption == std::vector<double>(3, 0.0));
  }
}
