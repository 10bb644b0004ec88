#include <doctest.h>

#include <sstream>

#include "inactive_heads/tensor_container.hpp"
#include "inactive_heads/trace.hpp"
#include "oracle/naive.hpp"
#include "oracle/random_trace.hpp"

using namespace ihead;

namespace {

std::string bytes_of(const AttentionTrace& t) {
  std::ostringstream out;
  write_trace(t, out);
  return out.str();
}

AttentionTrace from_bytes(const std::string& s) {
  std::istringstream in(s);
  return read_trace(in);
}

}  // namespace

TEST_CASE("config arithmetic") {
  const ModelConfig c = make_config(2, 4, 2, 16, 32, 64);
  CHECK(c.d_head == 4);
  CHECK(c.group_size() == 2);
  CHECK(c.d_kv() == 8);
  CHECK_THROWS_AS(make_config(2, 3, 2, 12, 32, 64), std::invalid_argument);
  ModelConfig bad = c;
  bad.d_head = 3;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("score function ids round-trip") {
  for (ScoreFn fn : kAllScoreFns) CHECK(parse_score_fn(to_string(fn)) == fn);
  CHECK_THROWS_AS(parse_score_fn("AHON_XX"), std::invalid_argument);
  CHECK(direction_of(ScoreFn::AWFT) == Direction::greater_than);
  CHECK(direction_of(ScoreFn::AWFT_LN) == Direction::greater_than);
  CHECK(direction_of(ScoreFn::AHON_LN) == Direction::less_than);
  CHECK(base_of(ScoreFn::LTHON_HN) == ScoreFn::LTHON);
}

TEST_CASE("smallest legal trace") {
  const ModelConfig c = make_config(1, 1, 1, 3, 4, 8);
  MatrixXf a(1, 1);
  a << 1.0f;
  MatrixXf v(1, 3);
  v << 0.5f, -1.0f, 2.0f;
  AttentionTrace t(c, "tiny", {a}, {v}, {}, {true});
  const TensorContainer cont = trace_to_container(t);
  CHECK(cont.tensors.size() == 3);
  CHECK(cont.at("attn").shape == std::vector<std::int64_t>{1, 1, 1, 1});
  CHECK(cont.at("values").shape == std::vector<std::int64_t>{1, 1, 1, 3});
  CHECK(cont.at("head_out").shape == std::vector<std::int64_t>{1, 1, 1, 3});
}

TEST_CASE("write/read round-trip preserves bits") {
  const ModelConfig c = make_config(2, 4, 2, 16, 32, 64);
  for (int n_pad : {0, 3}) {
    const AttentionTrace t = fixtures::random_trace(c, 9, 11 + n_pad, n_pad);
    const std::string s = bytes_of(t);
    const AttentionTrace back = from_bytes(s);
    CHECK(identical(t, back));
    CHECK(back.n_real() == 9);
    CHECK(bytes_of(t) == s);  // deterministic bytes
    CHECK(bytes_of(back) == s);
  }
}

TEST_CASE("metadata survives the container") {
  const ModelConfig c = make_config(1, 2, 2, 4, 8, 16);
  const AttentionTrace t = fixtures::random_trace(c, 4, 3);
  std::ostringstream out;
  write_trace(t, out, {{"source", "unit"}});
  std::istringstream in(out.str());
  const TensorContainer cont = read_container(in);
  CHECK(cont.meta("source") == "unit");
  CHECK(cont.meta("sequence_id") == t.sequence_id());
  CHECK(get_config(cont.metadata) == c);
}

TEST_CASE("row summing to 0.5 is rejected") {
  const ModelConfig c = make_config(1, 1, 1, 2, 4, 8);
  MatrixXf a(2, 2);
  a << 1.0f, 0.0f, 0.25f, 0.25f;
  MatrixXf v = MatrixXf::Ones(2, 2);
  CHECK_THROWS_AS(AttentionTrace(c, "bad", {a}, {v}, {}, {true, true}), data_error);

  // Same violation through the container path.
  MatrixXf good(2, 2);
  good << 1.0f, 0.0f, 0.5f, 0.5f;
  TensorContainer cont = trace_to_container(AttentionTrace(c, "ok", {good}, {v}, {}, {true, true}));
  cont.tensors["attn"].data[3] = 0.0f;  // row 1 now sums to 0.5
  std::ostringstream out;
  write_container(cont, out);
  std::istringstream in(out.str());
  CHECK_THROWS_AS(read_trace(in), data_error);
}

TEST_CASE("trace invariants are enforced") {
  const ModelConfig c = make_config(1, 1, 1, 2, 4, 8);
  MatrixXf v = MatrixXf::Ones(2, 2);
  MatrixXf future(2, 2);
  future << 0.5f, 0.5f, 0.5f, 0.5f;
  CHECK_THROWS_AS(AttentionTrace(c, "f", {future}, {v}, {}, {true, true}), data_error);
  MatrixXf neg(2, 2);
  neg << 1.0f, 0.0f, 1.5f, -0.5f;
  CHECK_THROWS_AS(AttentionTrace(c, "n", {neg}, {v}, {}, {true, true}), data_error);
  MatrixXf a(2, 2);
  a << 1.0f, 0.0f, 0.5f, 0.5f;
  MatrixXf z = MatrixXf::Ones(2, 2);
  z(1, 1) = 1.001f;
  CHECK_THROWS_AS(AttentionTrace(c, "z", {a}, {v}, {z}, {true, true}), data_error);
  z(1, 1) = 1.00005f;
  CHECK_NOTHROW(AttentionTrace(c, "z", {a}, {v}, {z}, {true, true}));
  CHECK_THROWS_AS(AttentionTrace(c, "p", {a}, {v}, {}, {false, false}), data_error);
  CHECK_THROWS_AS(AttentionTrace(c, "s", {a}, {MatrixXf::Ones(2, 3)}, {}, {true, true}), data_error);
}

TEST_CASE("missing head_out is recomputed as A*V") {
  const ModelConfig c = make_config(2, 2, 1, 6, 8, 32);
  const AttentionTrace t = fixtures::random_trace(c, 12, 5);
  TensorContainer cont = trace_to_container(t);
  cont.tensors.erase("head_out");
  const AttentionTrace back = trace_from_container(cont);
  for (int l = 0; l < 2; ++l) {
    for (int h = 0; h < 2; ++h) {
      const auto ref = oracle::matmul(back.attn(l, h), back.values(l, h));
      const auto& z = back.head_output(l, h);
      for (int i = 0; i < z.rows(); ++i) {
        for (int j = 0; j < z.cols(); ++j) CHECK(z(i, j) == doctest::Approx(ref[i * z.cols() + j]).epsilon(1e-6));
      }
    }
  }
}

TEST_CASE("malformed containers") {
  CHECK_THROWS_AS(decode_container({}), data_error);
  std::vector<char> junk = {8, 0, 0, 0, 0, 0, 0, 0, '{', '}'};
  CHECK_THROWS_AS(decode_container(junk), data_error);  // header shorter than declared
  std::vector<char> not_json = {2, 0, 0, 0, 0, 0, 0, 0, 'x', 'y'};
  CHECK_THROWS_AS(decode_container(not_json), data_error);

  TensorContainer c;
  c.tensors["x"] = Tensor{{2}, {1.0f}};
  CHECK_THROWS_AS(encode_container(c), data_error);
  c.tensors["x"] = Tensor{{1}, {std::nanf("")}};
  CHECK_THROWS_AS(encode_container(c), data_error);

  // Config in metadata disagrees with tensor shapes.
  const ModelConfig cfg = make_config(1, 2, 2, 4, 8, 16);
  TensorContainer t = trace_to_container(fixtures::random_trace(cfg, 3, 1));
  t.metadata["n_q_heads"] = "4";
  t.metadata["n_kv_heads"] = "4";
  t.metadata["d_head"] = "1";
  CHECK_THROWS_AS(trace_from_container(t), data_error);
}

TEST_CASE("container layout is sorted and self-describing") {
  TensorContainer c;
  c.tensors["b"] = Tensor{{2}, {1.0f, 2.0f}};
  c.tensors["a"] = Tensor{{1, 1}, {3.0f}};
  c.metadata["k"] = "v";
  const auto bytes = encode_container(c);
  std::uint64_t len = 0;
  for (int i = 7; i >= 0; --i) len = (len << 8) | static_cast<unsigned char>(bytes[i]);
  const std::string header(bytes.begin() + 8, bytes.begin() + 8 + static_cast<long>(len));
  CHECK(header.find("\"__metadata__\"") != std::string::npos);
  CHECK(header.find("\"a\"") < header.find("\"b\""));
  CHECK(bytes.size() == 8 + len + 3 * sizeof(float));
  const TensorContainer back = decode_container(bytes);
  CHECK(back.at("b").data == std::vector<float>{1.0f, 2.0f});
  CHECK(back.meta("k") == "v");
}

TEST_CASE("expand_kv_heads") {
  const ModelConfig one = make_config(1, 2, 1, 4, 8, 8);
  MatrixXf m = MatrixXf::Random(3, 2);
  auto out = expand_kv_heads(std::vector<MatrixXf>{m}, one);
  REQUIRE(out.size() == 2);
  CHECK(out[0] == m);
  CHECK(out[1] == m);

  const ModelConfig same = make_config(1, 3, 3, 6, 8, 8);
  std::vector<MatrixXf> three = {MatrixXf::Random(2, 2), MatrixXf::Random(2, 2), MatrixXf::Random(2, 2)};
  auto id = expand_kv_heads(three, same);
  for (int i = 0; i < 3; ++i) CHECK(id[i] == three[i]);
  CHECK(expand_kv_heads(id, same).size() == 3);  // idempotent

  const ModelConfig four = make_config(1, 4, 2, 8, 8, 8);
  std::vector<MatrixXf> two = {MatrixXf::Random(2, 2), MatrixXf::Random(2, 2)};
  auto g = expand_kv_heads(two, four);
  for (int q = 0; q < 4; ++q) CHECK(g[q] == two[q * 2 / 4]);

  // Commutes with row selection.
  std::vector<MatrixXf> rows = {two[0].topRows(1), two[1].topRows(1)};
  auto gr = expand_kv_heads(rows, four);
  for (int q = 0; q < 4; ++q) CHECK(gr[q] == MatrixXf(g[q].topRows(1)));

  ModelConfig odd = four;
  odd.n_kv_heads = 3;
  CHECK_THROWS_AS(expand_kv_heads(two, odd), std::invalid_argument);
}

TEST_CASE("slice drops padded positions") {
  const ModelConfig c = make_config(1, 2, 2, 4, 8, 16);
  const AttentionTrace t = fixtures::random_trace(c, 5, 9, 2);
  const HeadSlice s = t.slice(0, 1);
  CHECK(s.attn.rows() == 5);
  CHECK(s.values.rows() == 5);
  for (int i = 0; i < 5; ++i) CHECK(s.attn.row(i).sum() == doctest::Approx(1.0).epsilon(1e-5));
  CHECK_THROWS_AS(t.slice(1, 0), std::out_of_range);
}
