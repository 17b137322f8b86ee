// Foundations: deterministic RNG, tokenizer, feature files, manifests,
// decoder signals and their scaler.

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "ddsd/common.hpp"
#include "ddsd/decoder_signals.hpp"
#include "ddsd/features.hpp"
#include "ddsd/manifest.hpp"
#include "ddsd/rng.hpp"
#include "ddsd/tokenizer.hpp"
#include "test_util.hpp"

using namespace ddsd;

// ---------------------------------------------------------------------------
// RNG
// ---------------------------------------------------------------------------

TEST_CASE("sub_seed streams are decorrelated and stable", "[rng]") {
  // Same inputs -> same seed (determinism contract).
  REQUIRE(sub_seed(42, "example", 7) == sub_seed(42, "example", 7));
  // Any input change produces a different stream seed.
  REQUIRE(sub_seed(42, "example", 7) != sub_seed(42, "example", 8));
  REQUIRE(sub_seed(42, "example", 7) != sub_seed(43, "example", 7));
  REQUIRE(sub_seed(42, "example", 7) != sub_seed(42, "other", 7));

  // Neighbouring indices should not produce correlated generators: compare
  // first draws across 1000 adjacent sub-streams; all distinct.
  std::set<std::uint64_t> firsts;
  for (std::uint64_t i = 0; i < 1000; ++i) firsts.insert(Rng(sub_seed(1, "x", i)).next_u64());
  REQUIRE(firsts.size() == 1000);
}

TEST_CASE("uniform and normal sampling have the expected moments", "[rng]") {
  Rng rng(123);
  const int n = 200000;
  double usum = 0.0, nsum = 0.0, nsq = 0.0;
  double umin = 1.0, umax = 0.0;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    usum += u;
    umin = std::min(umin, u);
    umax = std::max(umax, u);
    const double z = rng.normal();
    nsum += z;
    nsq += z * z;
  }
  REQUIRE(umin >= 0.0);
  REQUIRE(umax < 1.0);
  REQUIRE(usum / n == Catch::Approx(0.5).margin(0.005));
  REQUIRE(nsum / n == Catch::Approx(0.0).margin(0.01));
  REQUIRE(nsq / n == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("shuffle is a permutation and deterministic per seed", "[rng]") {
  std::vector<int> v(100);
  for (int i = 0; i < 100; ++i) v[i] = i;
  std::vector<int> a = v, b = v;
  Rng r1(7), r2(7), r3(8);
  r1.shuffle(a);
  r2.shuffle(b);
  REQUIRE(a == b);  // same seed, same order
  std::vector<int> c = v;
  r3.shuffle(c);
  REQUIRE(a != c);  // different seed, different order (overwhelmingly)
  std::vector<int> sorted_a = a;
  std::sort(sorted_a.begin(), sorted_a.end());
  REQUIRE(sorted_a == v);  // it is a permutation
}

TEST_CASE("uniform_index is unbiased across small ranges", "[rng]") {
  Rng rng(99);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) counts[rng.uniform_index(7)]++;
  for (int k = 0; k < 7; ++k) REQUIRE(counts[k] == Catch::Approx(n / 7.0).epsilon(0.05));
}

// ---------------------------------------------------------------------------
// Tokenizer
// ---------------------------------------------------------------------------

TEST_CASE("byte tokenizer maps bytes to ids and round-trips", "[tokenizer]") {
  ByteTokenizer tok;
  REQUIRE(tok.vocab_size() == 260);

  SECTION("empty string") {
    auto seq = tok.encode("");
    REQUIRE(seq.ids.empty());
    REQUIRE(seq.real_len == 0);
  }
  SECTION("ascii byte values") {
    auto seq = tok.encode("hi");
    REQUIRE(seq.ids == std::vector<std::int32_t>{104, 105});
    REQUIRE(seq.real_len == 2);
  }
  SECTION("round-trip identity incl. multi-byte UTF-8") {
    const std::vector<std::string> cases = {"", "hello world", "caf\xc3\xa9 \xe2\x9c\x93",
                                            std::string("\x00\x01\xff", 3),
                                            "hey device play jazz"};
    for (const std::string& s : cases) REQUIRE(tok.decode(tok.encode(s).ids) == s);
  }
  SECTION("special ids do not collide with bytes and decode drops them") {
    REQUIRE(Tokens::kPad == 256);
    REQUIRE(Tokens::kSep == 257);
    REQUIRE(Tokens::kYes == 258);
    REQUIRE(Tokens::kNo == 259);
    std::vector<std::int32_t> ids{104, Tokens::kPad, 105, Tokens::kSep, Tokens::kYes, Tokens::kNo};
    REQUIRE(tok.decode(ids) == "hi");
  }
  SECTION("decode rejects out-of-range ids") {
    REQUIRE_THROWS_AS(tok.decode({260}), ValidationError);
    REQUIRE_THROWS_AS(tok.decode({-1}), ValidationError);
  }
}

TEST_CASE("pad_tokens fixes the length exactly", "[tokenizer]") {
  ByteTokenizer tok;
  SECTION("padding case") {
    TokenSequence s;
    s.ids = {1, 2};
    s.real_len = 2;
    auto p = tok.pad_tokens(s, 4);
    REQUIRE(p.ids == std::vector<std::int32_t>{1, 2, Tokens::kPad, Tokens::kPad});
    REQUIRE(p.real_len == 2);
  }
  SECTION("truncation case") {
    TokenSequence s;
    s.ids = {1, 2, 3, 4, 5};
    s.real_len = 5;
    auto p = tok.pad_tokens(s, 4);
    REQUIRE(p.ids == std::vector<std::int32_t>{1, 2, 3, 4});
    REQUIRE(p.real_len == 4);
  }
  SECTION("empty input") {
    auto p = tok.pad_tokens(tok.encode(""), 2);
    REQUIRE(p.ids == std::vector<std::int32_t>{Tokens::kPad, Tokens::kPad});
    REQUIRE(p.real_len == 0);
  }
  SECTION("property: output length is l for any (s, l)") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
      std::string s;
      const auto len = rng.uniform_index(20);
      for (std::uint64_t i = 0; i < len; ++i)
        s.push_back(static_cast<char>('a' + rng.uniform_index(26)));
      const std::size_t l = 1 + rng.uniform_index(16);
      auto p = tok.pad_tokens(tok.encode(s), l);
      REQUIRE(p.ids.size() == l);
      REQUIRE(p.real_len == std::min(s.size(), l));
      // no PAD inside the first real_len positions
      for (std::size_t i = 0; i < p.real_len; ++i) REQUIRE(p.ids[i] != Tokens::kPad);
      for (std::size_t i = p.real_len; i < l; ++i) REQUIRE(p.ids[i] == Tokens::kPad);
    }
  }
}

// ---------------------------------------------------------------------------
// Feature files
// ---------------------------------------------------------------------------

TEST_CASE("feature files round-trip bit-exactly", "[features]") {
  ddsd_test::TempDir tmp("feat");
  Rng rng(21);
  MatF m(5, 3);
  for (int t = 0; t < 5; ++t)
    for (int f = 0; f < 3; ++f) m(t, f) = static_cast<float>(rng.normal());
  const auto path = tmp / "a.feat";
  write_features(path, m);
  MatF back = read_features(path);
  REQUIRE(back.rows() == 5);
  REQUIRE(back.cols() == 3);
  REQUIRE((back.array() == m.array()).all());  // bit-exact round trip
}

TEST_CASE("feature file header is little-endian with fixed magic", "[features]") {
  MatF m(1, 2);
  m << 1.0f, -2.5f;
  const std::string bytes = serialize_features(m);
  REQUIRE(bytes.size() == 16 + 2 * 4);
  REQUIRE(bytes.substr(0, 4) == "AFEA");
  // version=1, T=1, F=2 as little-endian u32
  const auto u32_at = [&](std::size_t off) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data()) + off;
    return static_cast<std::uint32_t>(p[0]) | (p[1] << 8) | (p[2] << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
  };
  REQUIRE(u32_at(4) == 1);
  REQUIRE(u32_at(8) == 1);
  REQUIRE(u32_at(12) == 2);
  // 1.0f little-endian = 00 00 80 3f
  REQUIRE(u32_at(16) == 0x3f800000u);
}

TEST_CASE("feature parsing rejects corruption", "[features]") {
  MatF m(2, 2);
  m << 1, 2, 3, 4;
  const std::string good = serialize_features(m);

  SECTION("wrong magic") {
    std::string bad = good;
    bad[0] = 'X';
    REQUIRE_THROWS_AS(parse_features(bad), FormatError);
  }
  SECTION("wrong version") {
    std::string bad = good;
    bad[4] = 9;
    REQUIRE_THROWS_AS(parse_features(bad), FormatError);
  }
  SECTION("truncated payload") {
    REQUIRE_THROWS_AS(parse_features(good.substr(0, good.size() - 1)), FormatError);
  }
  SECTION("trailing garbage") {
    REQUIRE_THROWS_AS(parse_features(good + "x"), FormatError);
  }
  SECTION("zero frames") {
    std::string bad = good;
    bad[8] = 0;  // T = 0
    REQUIRE_THROWS_AS(parse_features(bad), FormatError);
  }
  SECTION("non-finite values rejected on write") {
    MatF nanm(1, 1);
    nanm(0, 0) = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(serialize_features(nanm), ValidationError);
  }
  SECTION("empty shape rejected on write") {
    REQUIRE_THROWS_AS(serialize_features(MatF(0, 3)), ShapeError);
  }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

static UtteranceRecord make_record(const std::string& id, Label label) {
  UtteranceRecord r;
  r.id = id;
  r.label = label;
  r.transcript = "hey device what time is it";
  r.audio_ref = "features/" + id + ".feat";
  r.decoder_signals_raw = DecoderSignals{2.5, 1.25, 0.9, 1.5};
  r.has_trigger_phrase = true;
  return r;
}

TEST_CASE("manifest round-trips records field-for-field", "[manifest]") {
  ddsd_test::TempDir tmp("manifest");
  std::vector<UtteranceRecord> recs;
  recs.push_back(make_record("ex-0", Label::kDirected));
  recs.push_back(make_record("ex-1", Label::kNonDirected));
  recs[1].transcript = "";  // empty transcript is legal
  recs[1].audio_ref = "";   // no audio is legal
  recs[1].has_trigger_phrase = false;

  const auto path = tmp / "manifest.jsonl";
  write_manifest(path, recs);
  auto back = read_manifest(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    REQUIRE(back[i].id == recs[i].id);
    REQUIRE(back[i].label == recs[i].label);
    REQUIRE(back[i].transcript == recs[i].transcript);
    REQUIRE(back[i].audio_ref == recs[i].audio_ref);
    REQUIRE(back[i].has_trigger_phrase == recs[i].has_trigger_phrase);
    REQUIRE(back[i].decoder_signals_raw.as_array() == recs[i].decoder_signals_raw.as_array());
  }
  SECTION("empty manifest round-trips") {
    const auto p2 = tmp / "empty.jsonl";
    write_manifest(p2, {});
    REQUIRE(read_manifest(p2).empty());
  }
}

TEST_CASE("manifest validation points at the offending line", "[manifest]") {
  const std::string good_line = record_to_json(make_record("a", Label::kDirected)).dump();

  const auto expect_error_on_line_2 = [&](const std::string& bad_line) {
    const std::string text = good_line + "\n" + bad_line + "\n";
    try {
      manifest_from_jsonl(text);
      FAIL("expected a DataError");
    } catch (const DataError& ex) {
      REQUIRE(std::string(ex.what()).find("line 2") != std::string::npos);
    }
  };

  SECTION("invalid JSON") { expect_error_on_line_2("{not json"); }
  SECTION("bad label enum") {
    auto j = record_to_json(make_record("b", Label::kDirected));
    j["label"] = "maybe";
    expect_error_on_line_2(j.dump());
  }
  SECTION("missing field") {
    auto j = record_to_json(make_record("b", Label::kDirected));
    j.erase("transcript");
    expect_error_on_line_2(j.dump());
  }
  SECTION("unknown field") {
    auto j = record_to_json(make_record("b", Label::kDirected));
    j["surprise"] = 1;
    expect_error_on_line_2(j.dump());
  }
  SECTION("wrong decoder_signals_raw arity") {
    auto j = record_to_json(make_record("b", Label::kDirected));
    j["decoder_signals_raw"] = {1.0, 2.0};
    expect_error_on_line_2(j.dump());
  }
  SECTION("confidence out of range") {
    auto j = record_to_json(make_record("b", Label::kDirected));
    j["decoder_signals_raw"] = {1.0, 2.0, 1.7, 3.0};
    expect_error_on_line_2(j.dump());
  }
  SECTION("duplicate id") { expect_error_on_line_2(good_line); }
  SECTION("empty id") {
    auto j = record_to_json(make_record("b", Label::kDirected));
    j["id"] = "";
    expect_error_on_line_2(j.dump());
  }
}

// ---------------------------------------------------------------------------
// Decoder signals
// ---------------------------------------------------------------------------

TEST_CASE("summarize averages each per-word list", "[signals]") {
  SECTION("two-point mean") {
    LatticeSummary lat;
    lat.graph_costs = {1.0, 1.0};
    lat.acoustic_costs = {2.0, 2.0};
    lat.confidences = {0.5, 0.7};
    lat.alternative_counts = {1.0, 1.0};
    REQUIRE(summarize(lat).confidence == Catch::Approx(0.6));
  }
  SECTION("identity on singletons") {
    LatticeSummary lat;
    lat.graph_costs = {3.25};
    lat.acoustic_costs = {1.5};
    lat.confidences = {0.8};
    lat.alternative_counts = {2.0};
    const auto s = summarize(lat);
    REQUIRE(s.graph_cost == 3.25);
    REQUIRE(s.acoustic_cost == 1.5);
    REQUIRE(s.confidence == 0.8);
    REQUIRE(s.alternatives == 2.0);
  }
  SECTION("arithmetic mean") {
    LatticeSummary lat;
    lat.graph_costs = {1, 2, 3, 4};
    lat.acoustic_costs = {0, 0, 0, 0};
    lat.confidences = {0.5, 0.5, 0.5, 0.5};
    lat.alternative_counts = {1, 1, 1, 1};
    REQUIRE(summarize(lat).graph_cost == Catch::Approx(2.5));
  }
  SECTION("permutation invariance") {
    Rng rng(3);
    LatticeSummary lat;
    for (int i = 0; i < 9; ++i) {
      lat.graph_costs.push_back(rng.normal(2, 1));
      lat.acoustic_costs.push_back(rng.normal(1, 0.5));
      lat.confidences.push_back(rng.uniform());
      lat.alternative_counts.push_back(1 + rng.uniform_index(5));
    }
    auto base = summarize(lat);
    // shuffle all lists with the same permutation
    std::vector<std::size_t> perm(9);
    for (std::size_t i = 0; i < 9; ++i) perm[i] = i;
    Rng prng(8);
    prng.shuffle(perm);
    LatticeSummary shuf;
    for (auto i : perm) {
      shuf.graph_costs.push_back(lat.graph_costs[i]);
      shuf.acoustic_costs.push_back(lat.acoustic_costs[i]);
      shuf.confidences.push_back(lat.confidences[i]);
      shuf.alternative_counts.push_back(lat.alternative_counts[i]);
    }
    auto after = summarize(shuf);
    REQUIRE(after.graph_cost == Catch::Approx(base.graph_cost).epsilon(1e-12));
    REQUIRE(after.confidence == Catch::Approx(base.confidence).epsilon(1e-12));
  }
  SECTION("empty word list is an error") {
    REQUIRE_THROWS_AS(summarize(LatticeSummary{}), ValidationError);
  }
  SECTION("unequal lengths are an error") {
    LatticeSummary lat;
    lat.graph_costs = {1, 2};
    lat.acoustic_costs = {1};
    lat.confidences = {0.5, 0.5};
    lat.alternative_counts = {1, 1};
    REQUIRE_THROWS_AS(summarize(lat), ValidationError);
  }
}

TEST_CASE("min-max scaler matches a brute-force scan and clamps", "[signals]") {
  SECTION("extrema on a fixed set") {
    std::vector<DecoderSignals> ds = {DecoderSignals{2, 0, 0.5, 1}, DecoderSignals{4, 0, 0.5, 1},
                                      DecoderSignals{6, 0, 0.5, 1}};
    auto sc = MinMaxScaler::fit(ds);
    REQUIRE(sc.mins()[0] == 2.0);
    REQUIRE(sc.maxs()[0] == 6.0);
  }
  SECTION("single-example dataset degenerates to min=max") {
    auto sc = MinMaxScaler::fit({DecoderSignals{3, 1, 0.5, 2}});
    REQUIRE(sc.mins() == sc.maxs());
    // degenerate dims map to 0
    const auto out = sc.transform(DecoderSignals{3, 1, 0.5, 2}).as_array();
    for (double v : out) REQUIRE(v == 0.0);
  }
  SECTION("random dataset: extrema match brute-force scan oracle") {
    Rng rng(77);
    std::vector<DecoderSignals> ds;
    for (int i = 0; i < 100; ++i)
      ds.push_back(DecoderSignals{rng.normal(3, 2), rng.normal(1, 1), rng.uniform(),
                                  rng.uniform(1, 7)});
    auto sc = MinMaxScaler::fit(ds);
    // independent O(n*k) scan
    for (int k = 0; k < 4; ++k) {
      double lo = ds[0].as_array()[k], hi = lo;
      for (const auto& d : ds) {
        lo = std::min(lo, d.as_array()[k]);
        hi = std::max(hi, d.as_array()[k]);
      }
      REQUIRE(sc.mins()[k] == lo);
      REQUIRE(sc.maxs()[k] == hi);
    }
    // every fitted example lands in [0,1]; each non-degenerate dim hits 0 and 1
    std::array<bool, 4> hit0{}, hit1{};
    for (const auto& d : ds) {
      const auto t = sc.transform(d).as_array();
      for (int k = 0; k < 4; ++k) {
        REQUIRE(t[k] >= 0.0);
        REQUIRE(t[k] <= 1.0);
        if (t[k] == 0.0) hit0[k] = true;
        if (t[k] == 1.0) hit1[k] = true;
      }
    }
    for (int k = 0; k < 4; ++k) {
      REQUIRE(hit0[k]);
      REQUIRE(hit1[k]);
    }
  }
  SECTION("fixed-point checks") {
    MinMaxScaler sc({2, 0, 0, 0}, {6, 1, 1, 1});
    REQUIRE(sc.transform(DecoderSignals{4, 0, 0, 0}).graph_cost == Catch::Approx(0.5));
    REQUIRE(sc.transform(DecoderSignals{0, 1.4, 0, 0}).acoustic_cost == 1.0);  // clamp above
    REQUIRE(sc.transform(DecoderSignals{-5, 0, 0, 0}).graph_cost == 0.0);      // clamp below
  }
  SECTION("monotone non-decreasing per component") {
    Rng rng(5);
    std::vector<DecoderSignals> ds;
    for (int i = 0; i < 30; ++i)
      ds.push_back(DecoderSignals{rng.normal(0, 1), rng.normal(0, 1), rng.uniform(), rng.uniform()});
    auto sc = MinMaxScaler::fit(ds);
    double prev = -1.0;
    for (double x = -3.0; x <= 3.0; x += 0.25) {
      const double y = sc.transform(DecoderSignals{x, 0, 0.5, 0.5}).graph_cost;
      REQUIRE(y >= prev);
      prev = y;
    }
  }
  SECTION("unfitted scaler and empty dataset are errors") {
    REQUIRE_THROWS_AS(MinMaxScaler().transform(DecoderSignals{}), ValidationError);
    REQUIRE_THROWS_AS(MinMaxScaler::fit({}), ValidationError);
  }
}

TEST_CASE("lattice JSONL ingestion validates per-line", "[signals]") {
  const std::string good =
      R"({"id":"u1","graph_costs":[1,2],"acoustic_costs":[0.5,0.7],"confidences":[0.9,0.8],"alternative_counts":[1,3]})";
  SECTION("valid row parses and summarizes") {
    auto rows = lattice_rows_from_jsonl(good + "\n");
    REQUIRE(rows.size() == 1);
    REQUIRE(rows[0].id == "u1");
    const auto s = summarize(rows[0].lattice);
    REQUIRE(s.graph_cost == Catch::Approx(1.5));
    REQUIRE(s.alternatives == Catch::Approx(2.0));
  }
  SECTION("unequal arrays flagged with line number") {
    const std::string bad =
        R"({"id":"u2","graph_costs":[1],"acoustic_costs":[0.5,0.7],"confidences":[0.9],"alternative_counts":[1]})";
    try {
      lattice_rows_from_jsonl(good + "\n" + bad + "\n");
      FAIL("expected DataError");
    } catch (const DataError& ex) {
      REQUIRE(std::string(ex.what()).find("line 2") != std::string::npos);
    }
  }
  SECTION("confidence outside [0,1] rejected") {
    const std::string bad =
        R"({"id":"u2","graph_costs":[1],"acoustic_costs":[0.5],"confidences":[1.2],"alternative_counts":[1]})";
    REQUIRE_THROWS_AS(lattice_rows_from_jsonl(bad), DataError);
  }
  SECTION("empty word list rejected") {
    const std::string bad =
        R"({"id":"u2","graph_costs":[],"acoustic_costs":[],"confidences":[],"alternative_counts":[]})";
    REQUIRE_THROWS_AS(lattice_rows_from_jsonl(bad), DataError);
  }
}
