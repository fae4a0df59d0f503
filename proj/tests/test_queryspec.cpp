#include <catch2/catch_amalgamated.hpp>

#include <string>
#include <vector>

#include "qsep/embedding.hpp"
#include "qsep/queryspec.hpp"
#include "qsep/synthdata.hpp"

using namespace qsep;

namespace {

SyntheticEmbeddingSpace small_space() {
  SyntheticSpaceConfig c;
  c.dim = 16;
  c.n_classes = 8;
  c.seed = 5;
  return SyntheticEmbeddingSpace(c);
}

}  // namespace

TEST_CASE("query grammar parses terms, weights and chains") {
  const auto one = parse_query_spec("text:click_train");
  REQUIRE(one.size() == 1);
  CHECK(one[0].modality == Modality::text);
  CHECK(one[0].label == "click_train");
  CHECK(one[0].weight == 1.0);

  const auto weighted = parse_query_spec("audio:beat_pair@2.5");
  REQUIRE(weighted.size() == 1);
  CHECK(weighted[0].modality == Modality::audio);
  CHECK(weighted[0].weight == 2.5);

  const auto chain =
      parse_query_spec("audio:hiss_band@2+image:hiss_band+text:tone_low@0.5");
  REQUIRE(chain.size() == 3);
  CHECK(chain[0].modality == Modality::audio);
  CHECK(chain[0].weight == 2.0);
  CHECK(chain[1].modality == Modality::image);
  CHECK(chain[1].weight == 1.0);
  CHECK(chain[2].label == "tone_low");
  CHECK(chain[2].weight == 0.5);
}

TEST_CASE("query grammar rejects malformed specs with clear messages") {
  CHECK_THROWS_WITH(parse_query_spec(""),
                    Catch::Matchers::ContainsSubstring("empty"));
  CHECK_THROWS_WITH(parse_query_spec("click_train"),
                    Catch::Matchers::ContainsSubstring("modality:label"));
  CHECK_THROWS_WITH(parse_query_spec("text:"),
                    Catch::Matchers::ContainsSubstring("label"));
  CHECK_THROWS_WITH(parse_query_spec("smell:rose"),
                    Catch::Matchers::ContainsSubstring("modality"));
  CHECK_THROWS_WITH(parse_query_spec("text:a@zero"),
                    Catch::Matchers::ContainsSubstring("weight"));
  CHECK_THROWS_WITH(parse_query_spec("text:a@-1"),
                    Catch::Matchers::ContainsSubstring("> 0"));
  CHECK_THROWS_WITH(parse_query_spec("text:a@0"),
                    Catch::Matchers::ContainsSubstring("> 0"));
  CHECK_THROWS_WITH(parse_query_spec("text:a++text:b"),
                    Catch::Matchers::ContainsSubstring("empty term"));
  CHECK_THROWS_WITH(parse_query_spec("mixed:a"),
                    Catch::Matchers::ContainsSubstring("mixed"));
}

TEST_CASE("labels resolve to class ids and unknown labels list the catalog") {
  const DatasetSpec ds = make_dataset(42, 8000, 0.12);
  for (const auto& c : ds.classes)
    CHECK(class_id_for_label(ds.classes, c.label) == c.class_id);
  CHECK_THROWS_WITH(class_id_for_label(ds.classes, "kazoo"),
                    Catch::Matchers::ContainsSubstring("kazoo") &&
                        Catch::Matchers::ContainsSubstring("tone_low") &&
                        Catch::Matchers::ContainsSubstring("beat_pair"));
}

TEST_CASE("resolved queries are weight-normalized anchor blends") {
  const SyntheticEmbeddingSpace space = small_space();
  const DatasetSpec ds = make_dataset(42, 8000, 0.12);
  const std::string label = ds.classes[3].label;

  // A single term is exactly that anchor, and keeps its modality.
  const QueryEmbedding solo =
      resolve_query(parse_query_spec("image:" + label), space, ds.classes);
  CHECK(solo.modality == Modality::image);
  CHECK(solo.vector == space.anchor(3, Modality::image).vector);

  // One term per modality with equal weights reproduces the blending
  // rule applied to the three anchors.
  const std::string spec =
      "audio:" + label + "+image:" + label + "+text:" + label;
  const QueryEmbedding blended =
      resolve_query(parse_query_spec(spec), space, ds.classes);
  CHECK(blended.modality == Modality::mixed);
  const QueryEmbedding want = mix_queries(
      space.anchor(3, Modality::audio), space.anchor(3, Modality::image),
      space.anchor(3, Modality::text), MixupWeights{1.0, 1.0, 1.0});
  REQUIRE(blended.vector.size() == want.vector.size());
  for (std::size_t i = 0; i < want.vector.size(); ++i)
    CHECK(blended.vector[i] == Catch::Approx(want.vector[i]).margin(1e-15));

  // Weights shift the blend toward the heavier term.
  const std::string other = ds.classes[6].label;
  const QueryEmbedding skewed = resolve_query(
      parse_query_spec("text:" + label + "@3+text:" + other), space,
      ds.classes);
  const QueryEmbedding qa = space.anchor(3, Modality::text);
  const QueryEmbedding qb = space.anchor(6, Modality::text);
  for (std::size_t i = 0; i < skewed.vector.size(); ++i)
    CHECK(skewed.vector[i] ==
          Catch::Approx((3.0 * qa.vector[i] + qb.vector[i]) / 4.0)
              .margin(1e-15));

  CHECK_THROWS(resolve_query(parse_query_spec("text:nope"), space,
                             ds.classes));
}
