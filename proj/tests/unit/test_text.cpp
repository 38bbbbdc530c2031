#include <doctest.h>

#include "coached/text.hpp"
#include "support.hpp"

using namespace coached;

TEST_CASE("utf8 round trip and code point counting") {
  const std::string s = "naïve 日本 ok";
  const auto cps = text::decode_utf8(s);
  CHECK(cps.size() == 11);
  CHECK(text::char_count(s) == 11);
  CHECK(text::encode_utf8(cps) == s);
}

TEST_CASE("invalid utf8 decodes to replacement characters") {
  const std::string bad = std::string("a") + char(0xff) + "b" + char(0xe6);
  const auto cps = text::decode_utf8(bad);
  REQUIRE(cps.size() == 4);
  CHECK(cps[1] == U'�');
  CHECK(cps[3] == U'�');
}

TEST_CASE("tokenizer lowercases alphanumeric runs") {
  CHECK(text::tokenize("The Bed, is for SLEEP!") == std::vector<std::string>{"the", "bed", "is", "for", "sleep"});
  CHECK(text::tokenize("CBT-I 2024") == std::vector<std::string>{"cbt", "i", "2024"});
  CHECK(text::tokenize("Naïve ÉTÉ") == std::vector<std::string>{"naïve", "été"});
  CHECK(text::tokenize("  ...  ").empty());
}

TEST_CASE("fnv1a64 matches the published test vectors") {
  CHECK(text::fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(text::fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(text::fnv1a64("foobar") == 0x85944171f73967e8ULL);
  CHECK(text::hex64(0xabcULL) == "0000000000000abc");
}

TEST_CASE("case-insensitive search helpers") {
  CHECK(text::find_icase("The RESPONSE is Good", "response is good") == 4);
  CHECK(text::rfind_icase("label: x label: y", "LABEL:") == 9);
  CHECK(text::find_icase("abc", "x") == std::string::npos);
  CHECK(text::starts_with_icase("VERDICT: good", "verdict:"));
  CHECK(text::trim("  \n x y \t") == "x y");
}

TEST_CASE("format_double is the shortest round-tripping form") {
  CHECK(text::format_double(0.1) == "0.1");
  CHECK(text::format_double(4.3) == "4.3");
  CHECK(text::format_double(351.0) == "351");
  const double x = 1.0 / 3.0;
  CHECK(std::stod(text::format_double(x)) == x);
}

TEST_CASE("file helpers report io errors") {
  testing::TempDir dir;
  text::write_file(dir.file("a.txt"), "hello");
  CHECK(text::read_file(dir.file("a.txt")) == "hello");
  CHECK_THROWS_KIND(text::read_file(dir.file("missing.txt")), ErrorKind::kIoError);
  CHECK_THROWS_KIND(text::write_file(dir.file("no/such/dir/x"), "x"), ErrorKind::kIoError);
}

TEST_CASE("timestamps are ISO-8601 UTC with milliseconds") {
  const auto ts = text::utc_timestamp_now();
  CHECK(ts.size() == 24);
  CHECK(ts[10] == 'T');
  CHECK(ts.back() == 'Z');
}
