#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "privest/model.hpp"
#include "support/fixtures.hpp"

using namespace privest;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "privest_model_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("load_model accepts a minimal scalar model") {
  auto path = temp_file("scalar.json");
  write_text(path,
             R"({"agent_dims":[1],"H":[[1.0]],"R":[[1.0]],"J0":null,
                 "U":[[1.0]],"G":[[[1.0]]]})");
  SystemModel m = load_model(path.string());
  CHECK(m.n_obs() == 1);
  CHECK(m.n_params() == 1);
  CHECK(m.n_agents() == 1);
  CHECK_FALSE(m.has_prior());
}

TEST_CASE("load_model rejects inconsistent agent_dims") {
  auto path = temp_file("baddims.json");
  write_text(path,
             R"({"agent_dims":[1],"H":[[1.0],[0.5]],"R":[[1.0,0.0],[0.0,1.0]],
                 "J0":null,"U":[[1.0]],"G":[[[1.0]],[[0.0]]]})");
  try {
    load_model(path.string());
    FAIL("expected dimension mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::model_invalid);
    CHECK(std::string(e.what()).find("agent_dims") != std::string::npos);
  }
}

TEST_CASE("load_model rejects indefinite R") {
  auto path = temp_file("badR.json");
  write_text(path,
             R"({"agent_dims":[2],"H":[[1.0],[0.0]],"R":[[1.0,2.0],[2.0,1.0]],
                 "J0":null,"U":[[1.0]],"G":[[[1.0]]]})");
  try {
    load_model(path.string());
    FAIL("expected invariant violation");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::model_invalid);
    CHECK(std::string(e.what()).find("R") != std::string::npos);
  }
}

TEST_CASE("load_model rejects parse garbage and PSD-singular priors") {
  auto garbage = temp_file("garbage.json");
  write_text(garbage, "{not json");
  CHECK_THROWS_AS(load_model(garbage.string()), Error);

  auto singular_prior = temp_file("singular_prior.json");
  write_text(singular_prior,
             R"({"agent_dims":[2],"H":[[1.0,0.0],[0.0,1.0]],
                 "R":[[1.0,0.0],[0.0,1.0]],"J0":[[1.0,0.0],[0.0,0.0]],
                 "U":[[1.0,0.0]],"G":[[[0.0,1.0]]]})");
  try {
    load_model(singular_prior.string());
    FAIL("expected prior rejection");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("J0") != std::string::npos);
  }
}

TEST_CASE("load_model requires a nonzero private map") {
  auto path = temp_file("zeroG.json");
  write_text(path,
             R"({"agent_dims":[1],"H":[[1.0]],"R":[[1.0]],"J0":null,
                 "U":[[1.0]],"G":[[[0.0]]]})");
  CHECK_THROWS_AS(load_model(path.string()), Error);
}

TEST_CASE("agent_slice lays out contiguous index blocks") {
  SystemModel m = fixtures::three_measurement_no_prior();
  m.agent_dims = {2, 3};
  m.H = Matrix::Identity(5, 2);
  m.H(2, 0) = 0.3;
  m.R = Matrix::Identity(5, 5);
  m.G = {m.G[0], m.G[0]};
  m.validate();

  auto s1 = agent_slice(m, 1);
  CHECK(s1.offset == 0);
  CHECK(s1.size == 2);
  auto s2 = agent_slice(m, 2);
  CHECK(s2.offset == 2);  // rows {3,4,5} in 1-based terms
  CHECK(s2.size == 3);
  CHECK_THROWS_AS(agent_slice(m, 3), Error);
  CHECK_THROWS_AS(agent_slice(m, 0), Error);

  SystemModel single = fixtures::three_measurement_no_prior();
  single.agent_dims = {3};
  auto s = agent_slice(single, 1);
  CHECK(s.offset == 0);
  CHECK(s.size == 3);
}

TEST_CASE("agent slices partition the rows for random partitions") {
  Rng rng(77);
  for (int trial = 0; trial < 25; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.next_u64() % 12);
    auto dims = fixtures::random_partition(rng, n, 5);
    SystemModel m;
    m.agent_dims = dims;
    m.H = fixtures::random_matrix(rng, n, 1);
    m.H(0, 0) += 2.0;
    m.R = Matrix::Identity(n, n);
    m.J0 = Matrix::Zero(1, 1);
    m.U = Matrix::Identity(1, 1);
    for (size_t i = 0; i < dims.size(); ++i) m.G.push_back(Matrix::Identity(1, 1));
    m.validate();

    Index expected_offset = 0;
    for (int i = 1; i <= m.n_agents(); ++i) {
      auto s = agent_slice(m, i);
      CHECK(s.offset == expected_offset);
      expected_offset += s.size;
    }
    CHECK(expected_offset == n);
  }
}

TEST_CASE("serialized models reload bit-exactly") {
  Rng rng(123);
  for (int trial = 0; trial < 10; ++trial) {
    fixtures::RandomModelOptions opt;
    opt.with_prior = trial % 2 == 1;
    SystemModel m = fixtures::random_model(rng, opt);
    auto path = temp_file("roundtrip.json");
    save_model(m, path.string());
    SystemModel back = load_model(path.string());
    REQUIRE(back.agent_dims == m.agent_dims);
    CHECK((back.H - m.H).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.R - m.R).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.J0 - m.J0).cwiseAbs().maxCoeff() == 0.0);
    CHECK((back.U - m.U).cwiseAbs().maxCoeff() == 0.0);
    for (size_t i = 0; i < m.G.size(); ++i)
      CHECK((back.G[i] - m.G[i]).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("privacy request validation") {
  PrivacyRequest req;
  req.eps = {1.0, 0.0};
  req.validate(2);
  CHECK_THROWS_AS(req.validate(3), Error);
  req.eps = {-0.5, 0.0};
  CHECK_THROWS_AS(req.validate(2), Error);
  req.eps = {1.0, 1.0};
  req.delta = std::vector<double>{0.0, 1.0};
  CHECK_THROWS_AS(req.validate(2), Error);
}
