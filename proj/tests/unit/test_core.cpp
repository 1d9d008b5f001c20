#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>

#include "peel/binary_io.hpp"
#include "peel/config.hpp"
#include "peel/error.hpp"
#include "peel/hash.hpp"
#include "peel/rng.hpp"
#include "peel/types.hpp"
#include "support.hpp"

using namespace peel;

TEST_CASE("full embedding concatenates the item's blocks") {
  Matrix table(1, 4);
  const float values[] = {1, 2, 3, 4};
  std::copy(std::begin(values), std::end(values), table.row(0).begin());
  const BlockGrid grid = BlockGrid::FromTable(table, 2, {{0}});
  CHECK(grid.block(0, 0)(0, 0) == 1.0f);
  CHECK(grid.block(0, 1)(0, 1) == 4.0f);
  CHECK(grid.FullEmbedding(0) == std::vector<float>{1, 2, 3, 4});
}

TEST_CASE("single block grid is the identity") {
  Matrix table(3, 5);
  Rng rng(3);
  test::FillNormal(table, rng, 1.0);
  const BlockGrid grid = BlockGrid::FromTable(table, 1, {{2, 0}, {1}});
  for (ItemId v = 0; v < 3; ++v) {
    const auto row = table.row(v);
    CHECK(grid.FullEmbedding(v) == std::vector<float>(row.begin(), row.end()));
  }
}

TEST_CASE("splitting and reassembling a wide table round-trips") {
  Matrix table(10, 128);
  Rng rng(11);
  test::FillNormal(table, rng, 1.0);
  const BlockGrid grid = BlockGrid::FromTable(table, 16, {{0, 3, 6, 9}, {1, 4, 7}, {2, 5, 8}});
  CHECK(grid.FullEmbedding(7).size() == 128);
  CHECK(grid.ToTable() == table);
  const ItemSlot slot = grid.slot(7);
  CHECK(slot.group == 1);
  CHECK(slot.row == 2);
  CHECK(grid.block(1, 15)(2, 7) == table(7, 15 * 8 + 7));
}

TEST_CASE("unknown item id is a not-found error") {
  const BlockGrid grid(2, 2, {{0, 1}}, 2);
  try {
    grid.FullEmbedding(5);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNotFound);
  }
}

TEST_CASE("grid rejects groups that do not partition the items") {
  CHECK_THROWS_AS(BlockGrid(2, 2, {{0, 1}, {1}}, 2), Error);
  CHECK_THROWS_AS(BlockGrid(2, 2, {{0}}, 2), Error);
}

TEST_CASE("equal segments hand the remainder to the earliest groups") {
  CHECK(EqualSegmentSizes(7, 3) == std::vector<std::size_t>{3, 2, 2});
  CHECK(EqualSegmentSizes(6, 3) == std::vector<std::size_t>{2, 2, 2});
  CHECK(EqualSegmentSizes(10, 4) == std::vector<std::size_t>{3, 3, 2, 2});
}

TEST_CASE("config text round-trips through its canonical form") {
  PipelineConfig c;
  c.block_dim = 4;
  c.blocks_per_item = 8;
  c.lambda = 0.25;
  c.split_ratios = {0.6, 0.2, 0.2};
  c.scorer_hidden = {16, 8};
  c.controller_hidden = {};
  c.final_layer_only = false;
  const PipelineConfig back = ParseConfig(FormatConfig(c));
  CHECK(FormatConfig(back) == FormatConfig(c));
  CHECK(back.scorer_hidden == std::vector<std::size_t>{16, 8});
  CHECK(back.controller_hidden.empty());
  CHECK(back.lambda == 0.25);
}

TEST_CASE("config parsing rejects unknown keys and sections") {
  auto kind = [](const std::string& text) {
    try {
      ParseConfig(text).Validate();
    } catch (const Error& e) {
      return e.kind();
    }
    return ErrorKind::kIo;
  };
  CHECK(kind("[model]\nblok_dim = 4\n") == ErrorKind::kConfig);
  CHECK(kind("[nonsense]\nx = 1\n") == ErrorKind::kConfig);
  CHECK(kind("[model]\nblock_dim = -4\n") == ErrorKind::kConfig);
  CHECK(kind("[model]\nblocks_per_item = 17\n") == ErrorKind::kConfig);
}

TEST_CASE("config comments and defaults") {
  const PipelineConfig c = ParseConfig("# comment\n[model]\nblock_dim = 3  \n\n[pretrain]\n");
  CHECK(c.block_dim == 3);
  CHECK(c.blocks_per_item == PipelineConfig{}.blocks_per_item);
}

TEST_CASE("value parsers") {
  CHECK(ParseBoolValue("k", "on"));
  CHECK_FALSE(ParseBoolValue("k", "0"));
  CHECK_THROWS_AS(ParseBoolValue("k", "maybe"), Error);
  CHECK(ParseCountList("k", "1, 2,3") == std::vector<std::size_t>{1, 2, 3});
  CHECK(ParseCountList("k", "none").empty());
  CHECK(ParseRealList("k", "0.5,1e-3") == std::vector<double>{0.5, 1e-3});
  CHECK_THROWS_AS(ParseRealValue("k", "1.5x"), Error);
}

TEST_CASE("byte writer and reader agree") {
  ByteWriter w;
  w.Magic("TEST");
  w.U16(7);
  w.U32(0xDEADBEEF);
  w.U64(1ULL << 40);
  w.F32(-1.5f);
  w.F64(0.1);
  w.Str("peel");
  Matrix m(2, 3, 0.5f);
  m(1, 2) = 9.0f;
  w.Mat(m);
  const auto bytes = w.Take();
  CHECK(bytes[4] == 7);  // little-endian
  CHECK(bytes[5] == 0);

  ByteReader r(bytes);
  r.ExpectMagic("TEST");
  CHECK(r.U16() == 7);
  CHECK(r.U32() == 0xDEADBEEF);
  CHECK(r.U64() == (1ULL << 40));
  CHECK(r.F32() == -1.5f);
  CHECK(r.F64() == 0.1);
  CHECK(r.Str() == "peel");
  CHECK(r.Mat() == m);
  CHECK(r.AtEnd());
}

TEST_CASE("truncated buffers and wrong magic are format errors") {
  ByteWriter w;
  w.Magic("ABCD");
  w.U16(1);
  const auto bytes = w.Take();
  ByteReader r(bytes);
  r.ExpectMagic("ABCD");
  try {
    r.U32();
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kFormat);
  }
  ByteReader r2(bytes);
  CHECK_THROWS_AS(r2.ExpectMagic("WXYZ"), Error);
}

TEST_CASE("content hashes match git's blob hashing") {
  // `printf 'hello\n' | git hash-object --stdin` and the empty blob.
  CHECK(GitBlobSha1(std::string_view("hello\n")) == "ce013625030ba8dba906f756967f9e9ca394464a");
  CHECK(GitBlobSha1(std::string_view("")) == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("rng streams are independent of parent consumption") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) a.Uniform01();
  CHECK(a.Split(5).seed() == b.Split(5).seed());
  CHECK(a.Split(5).seed() != b.Split(6).seed());
  Rng c = b.Split(9), d = b.Split(9);
  CHECK(c.engine()() == d.engine()());
}

TEST_CASE("error kinds have stable names") {
  CHECK(ErrorKindName(ErrorKind::kBudgetInfeasible) == "budget_infeasible");
  CHECK(ErrorKindName(ErrorKind::kSchemaMismatch) == "schema_mismatch");
}
