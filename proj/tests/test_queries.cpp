#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "cam3d/queries.hpp"
#include "cam3d/rng.hpp"
#include "test_util.hpp"

using Catch::Approx;
using namespace cam3d;

TEST_CASE("positional embedding layout") {
  SECTION("too narrow to hold one sin/cos pair per scalar") {
    RefState s;
    REQUIRE_THROWS_AS(sin_pos_embed(s, 17), std::invalid_argument);
    REQUIRE_NOTHROW(sin_pos_embed(s, 18));
  }

  SECTION("zero state produces the sin(0)/cos(0) pattern") {
    RefState zero;
    const VecX e = sin_pos_embed(zero, 64);
    // d = 64 gives 7 channels per scalar: three sin/cos pairs then one odd
    // sin channel, plus one zero pad channel at the very end.
    const int per = 64 / kStateDims;
    REQUIRE(per == 7);
    for (int k = 0; k < kStateDims; ++k) {
      const int base = k * per;
      for (int i = 0; i < 3; ++i) {
        REQUIRE(e[base + 2 * i] == 0.0);      // sin(0)
        REQUIRE(e[base + 2 * i + 1] == 1.0);  // cos(0)
      }
      REQUIRE(e[base + 6] == 0.0);  // odd leftover channel is a sin
    }
    REQUIRE(e[63] == 0.0);  // pad
  }

  SECTION("frequencies follow the base-10000 geometric ladder") {
    RefState s;
    s.x = 1.25;
    const int d = 36;  // per = 4: two sin/cos pairs, no odd channel
    const VecX e = sin_pos_embed(s, d);
    REQUIRE(e[0] == std::sin(1.25));
    REQUIRE(e[1] == std::cos(1.25));
    const double f1 = std::pow(10000.0, -2.0 / 4.0);
    REQUIRE(e[2] == std::sin(1.25 * f1));
    REQUIRE(e[3] == std::cos(1.25 * f1));
    // Only the x block reacts; the y block shows the zero pattern.
    REQUIRE(e[4] == 0.0);
    REQUIRE(e[5] == 1.0);
  }

  SECTION("bounded and deterministic") {
    std::mt19937_64 gen(11);
    for (int t = 0; t < 50; ++t) {
      const RefState s = test_util::random_state(gen);
      const VecX a = sin_pos_embed(s, 64);
      const VecX b = sin_pos_embed(s, 64);
      REQUIRE(a == b);
      REQUIRE(a.cwiseAbs().maxCoeff() <= 1.0);
    }
  }
}

TEST_CASE("semantic embedding") {
  SECTION("zero weights give a zero vector") {
    EmbedWeights w;
    w.mlp = Mlp2(3, 8, 8);
    const VecX z = VecX::Ones(2);
    REQUIRE(semantic_embed(z, 0.9, w) == VecX::Zero(8));
  }

  SECTION("identity layers expose the [z_sem, score] concatenation") {
    EmbedWeights w;
    w.mlp = Mlp2(3, 3, 3);
    w.mlp.first.weight = MatX::Identity(3, 3);
    w.mlp.second.weight = MatX::Identity(3, 3);
    VecX z(2);
    z << -1.0, 2.0;
    const VecX out = semantic_embed(z, 0.5, w);
    REQUIRE(out.size() == 3);
    REQUIRE(out[0] == 0.0);  // ReLU clamps the negative channel
    REQUIRE(out[1] == 2.0);
    REQUIRE(out[2] == 0.5);  // score rides in the last input slot
  }

  SECTION("width mismatch throws") {
    const EmbedWeights w = make_embed_weights(4, 16, 1);
    REQUIRE_THROWS_AS(semantic_embed(VecX::Zero(3), 0.5, w), std::invalid_argument);
    REQUIRE_NOTHROW(semantic_embed(VecX::Zero(4), 0.5, w));
  }

  SECTION("seeded weights are deterministic") {
    const EmbedWeights a = make_embed_weights(4, 16, 9);
    const EmbedWeights b = make_embed_weights(4, 16, 9);
    REQUIRE(a.mlp.first.weight == b.mlp.first.weight);
    REQUIRE(a.mlp.second.weight == b.mlp.second.weight);
    const EmbedWeights c = make_embed_weights(4, 16, 10);
    REQUIRE(a.mlp.first.weight != c.mlp.first.weight);
  }
}

TEST_CASE("global queries") {
  BevRange range;
  range.x_min = -10;
  range.x_max = 10;
  range.y_min = -20;
  range.y_max = 20;
  range.z_min = 0;
  range.z_max = 2;

  SECTION("count, kind, and field conventions") {
    const QuerySet qs = make_global_queries(25, range, 32, 3);
    REQUIRE(qs.size() == 25);
    REQUIRE(qs.width == 32);
    for (const auto& q : qs.items) {
      REQUIRE(q.kind == QueryKind::global);
      REQUIRE(q.score == 1.0);
      REQUIRE(q.state.w == 1.0);
      REQUIRE(q.state.l == 1.0);
      REQUIRE(q.state.h == 1.0);
      REQUIRE(q.state.theta == 0.0);
      REQUIRE(q.state.vx == 0.0);
      REQUIRE(q.state.vy == 0.0);
      REQUIRE(q.state.x >= range.x_min);
      REQUIRE(q.state.x <= range.x_max);
      REQUIRE(q.state.y >= range.y_min);
      REQUIRE(q.state.y <= range.y_max);
      REQUIRE(q.state.z >= range.z_min);
      REQUIRE(q.state.z <= range.z_max);
      REQUIRE(q.embedding == sin_pos_embed(q.state, 32));
    }
  }

  SECTION("bit-identical across runs, different across seeds") {
    const QuerySet a = make_global_queries(40, range, 32, 5);
    const QuerySet b = make_global_queries(40, range, 32, 5);
    for (int i = 0; i < a.size(); ++i) {
      REQUIRE(a.items[i].state.to_vector() == b.items[i].state.to_vector());
      REQUIRE(a.items[i].embedding == b.items[i].embedding);
    }
    const QuerySet c = make_global_queries(40, range, 32, 6);
    REQUIRE(a.items[0].state.to_vector() != c.items[0].state.to_vector());
  }

  SECTION("edge cases") {
    REQUIRE(make_global_queries(0, range, 32, 1).empty());
    REQUIRE_THROWS_AS(make_global_queries(-1, range, 32, 1), std::invalid_argument);
    BevRange bad = range;
    bad.x_max = bad.x_min - 1.0;
    REQUIRE_THROWS_AS(make_global_queries(4, bad, 32, 1), std::invalid_argument);
  }
}

TEST_CASE("adaptive queries") {
  const std::vector<CameraModel> rig{test_util::axis_camera()};
  const EmbedWeights weights = make_embed_weights(4, 32, 2);

  auto make_det = [](double score) {
    Detection2D det;
    det.camera_id = 0;
    det.u = 300.0;
    det.v = 120.0;
    det.w = 50.0;
    det.h = 30.0;
    det.depth = 12.0;
    det.score = score;
    det.z_sem = VecX::Zero(4);
    det.z_sem[2] = 1.0;
    return det;
  };

  SECTION("score and depth-confidence filters drop quietly") {
    std::vector<Detection2D> dets{make_det(0.9), make_det(0.2)};
    Detection2D diffuse = make_det(0.8);
    diffuse.depth_dist = DepthDistribution{{8, 10, 12, 14}, {0.25, 0.25, 0.25, 0.25}};
    dets.push_back(diffuse);
    const QuerySet qs = make_adaptive_queries(dets, rig, weights, 0.3);
    REQUIRE(qs.size() == 1);
    REQUIRE(qs.items[0].score == 0.9);
    REQUIRE(qs.items[0].kind == QueryKind::adaptive);
  }

  SECTION("a peaked depth distribution passes the confidence gate") {
    Detection2D det = make_det(0.8);
    det.depth_dist = DepthDistribution{{10.8, 12.0, 13.2}, {0.1, 0.8, 0.1}};
    REQUIRE(make_adaptive_queries({det}, rig, weights, 0.3).size() == 1);
  }

  SECTION("unknown camera id is an error") {
    Detection2D det = make_det(0.9);
    det.camera_id = 42;
    REQUIRE_THROWS_AS(make_adaptive_queries({det}, rig, weights, 0.3), std::out_of_range);
  }

  SECTION("state matches the lift and the embedding decomposes") {
    const Detection2D det = make_det(0.7);
    const QuerySet qs = make_adaptive_queries({det}, rig, weights, 0.3);
    REQUIRE(qs.size() == 1);
    const RefState lifted = lift_detection(rig[0], det);
    REQUIRE(qs.items[0].state.to_vector() == lifted.to_vector());
    const VecX expect =
        sin_pos_embed(lifted, 32) + semantic_embed(det.z_sem, det.score, weights);
    REQUIRE((qs.items[0].embedding - expect).cwiseAbs().maxCoeff() <= 1e-12);
  }

  SECTION("raising the score threshold never adds queries") {
    std::mt19937_64 gen(8);
    std::vector<Detection2D> dets;
    for (int i = 0; i < 30; ++i) {
      Detection2D det = make_det(uniform01(gen));
      det.u = uniform_in(gen, 0, 704);
      det.v = uniform_in(gen, 0, 256);
      dets.push_back(det);
    }
    int prev = static_cast<int>(dets.size()) + 1;
    for (double t : {0.0, 0.25, 0.5, 0.75, 1.0}) {
      const int n = make_adaptive_queries(dets, rig, weights, t).size();
      REQUIRE(n <= prev);
      prev = n;
    }
  }

  SECTION("empty input gives an empty set with the weight width") {
    const QuerySet qs = make_adaptive_queries({}, rig, weights, 0.3);
    REQUIRE(qs.empty());
    REQUIRE(qs.width == 32);
  }
}

TEST_CASE("query set composition") {
  std::mt19937_64 gen(12);
  QuerySet global = test_util::random_query_set(gen, 5, 24);
  QuerySet adaptive = test_util::random_query_set(gen, 3, 24);
  QuerySet temporal = test_util::random_query_set(gen, 2, 24);
  for (auto& q : global.items) q.kind = QueryKind::global;
  for (auto& q : adaptive.items) q.kind = QueryKind::adaptive;
  for (auto& q : temporal.items) q.kind = QueryKind::temporal;

  SECTION("order is global, adaptive, temporal") {
    const QuerySet all = compose_queries(global, adaptive, temporal);
    REQUIRE(all.size() == 10);
    REQUIRE(all.width == 24);
    for (int i = 0; i < 5; ++i) {
      REQUIRE(all.items[i].kind == QueryKind::global);
      REQUIRE(all.items[i].embedding == global.items[i].embedding);
    }
    for (int i = 0; i < 3; ++i)
      REQUIRE(all.items[5 + i].embedding == adaptive.items[i].embedding);
    for (int i = 0; i < 2; ++i)
      REQUIRE(all.items[8 + i].embedding == temporal.items[i].embedding);
  }

  SECTION("width disagreement between non-empty sets throws") {
    QuerySet narrow = test_util::random_query_set(gen, 2, 16);
    REQUIRE_THROWS_AS(compose_queries(global, narrow, temporal), std::invalid_argument);
  }

  SECTION("empty sets pass through regardless of nominal width") {
    const QuerySet none(16);
    const QuerySet all = compose_queries(global, none, QuerySet{});
    REQUIRE(all.size() == 5);
    REQUIRE(all.width == 24);
    // All-empty composition keeps the first nominal width on record.
    REQUIRE(compose_queries(QuerySet{16}, QuerySet{}, QuerySet{}).width == 16);
  }
}

TEST_CASE("query set plumbing") {
  std::mt19937_64 gen(13);
  QuerySet qs = test_util::random_query_set(gen, 4, 20);

  SECTION("push enforces the embedding width") {
    Query q;
    q.state = test_util::random_state(gen);
    q.embedding = VecX::Zero(19);
    REQUIRE_THROWS_AS(qs.push(q), std::invalid_argument);
  }

  SECTION("embeddings_of and with_embeddings round trip") {
    const MatX rows = embeddings_of(qs);
    REQUIRE(rows.rows() == 4);
    REQUIRE(rows.cols() == 20);
    MatX shifted = rows;
    shifted.array() += 1.0;
    const QuerySet out = with_embeddings(qs, shifted);
    for (int i = 0; i < qs.size(); ++i) {
      REQUIRE(out.items[i].embedding == (qs.items[i].embedding.array() + 1.0).matrix());
      REQUIRE(out.items[i].state.to_vector() == qs.items[i].state.to_vector());
      REQUIRE(out.items[i].score == qs.items[i].score);
    }
    REQUIRE_THROWS_AS(with_embeddings(qs, MatX::Zero(3, 20)), std::invalid_argument);
    REQUIRE_THROWS_AS(with_embeddings(qs, MatX::Zero(4, 21)), std::invalid_argument);
  }
}
