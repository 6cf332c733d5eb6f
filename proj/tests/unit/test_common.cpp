#include <numeric>

#include "doctest.h"
#include "needle/common/base64.hpp"
#include "needle/common/error.hpp"
#include "needle/common/hash.hpp"
#include "needle/common/image.hpp"
#include "needle/common/settings.hpp"
#include "needle/common/version.hpp"
#include "temp_dir.hpp"

using namespace needle;

TEST_CASE("xxh64 matches reference digests") {
  // Reference values from the python xxhash package.
  CHECK(xxh64(std::string_view("")) == 0xef46db3751d8e999ULL);
  CHECK(xxh64(std::string_view("a")) == 0xd24ec4f1a98c6e5bULL);
  CHECK(xxh64(std::string_view("abc")) == 0x44bc2cf5ad770999ULL);
  CHECK(xxh64(std::string_view("Nobody inspects the spammish repetition")) == 0xfbcea83c8a378bf1ULL);
  CHECK(xxh64(std::string_view("abc"), 42) == 0x13c1d910702770e6ULL);

  std::vector<uint8_t> big;
  for (int rep = 0; rep < 3; ++rep)
    for (int b = 0; b < 256; ++b) big.push_back(static_cast<uint8_t>(b));
  CHECK(xxh64(big) == 0x8e03c838c596036fULL);
}

TEST_CASE("png encode/decode preserves pixels") {
  ImagePixels img(7, 5);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<uint8_t>(i * 37);
  auto png = encodePng(img);
  CHECK(decodeImage(png) == img);
}

TEST_CASE("garbage bytes are reported as corrupt") {
  std::vector<uint8_t> junk{1, 2, 3, 4, 5};
  CHECK_THROWS_AS(decodeImage(junk), Error);
  try {
    decodeImage(junk);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::Corrupt);
  }
}

TEST_CASE("base64 round trip and malformed input") {
  std::vector<uint8_t> bytes{0, 1, 2, 250, 251, 252, 253};
  CHECK(base64Decode(base64Encode(bytes)) == bytes);
  CHECK(base64Encode(std::vector<uint8_t>{'M', 'a', 'n'}) == "TWFu");
  CHECK_THROWS_AS(base64Decode("!!!!"), Error);
}

TEST_CASE("semantic versions") {
  auto v = SemVer::parse("1.2.3+14");
  REQUIRE(v);
  CHECK(v->major == 1);
  CHECK(v->build == "14");
  CHECK(v->str() == "1.2.3+14");
  CHECK_FALSE(SemVer::parse("1.2"));
  CHECK_FALSE(SemVer::parse("01.2.3"));
  CHECK(SemVer::parse(buildVersion()));
}

TEST_CASE("host:port parsing") {
  auto hp = HostPort::parse("127.0.0.1:8461");
  CHECK(hp.host == "127.0.0.1");
  CHECK(hp.port == 8461);
  CHECK_THROWS_AS(HostPort::parse("localhost"), Error);
  CHECK_THROWS_AS(HostPort::parse("localhost:99999"), Error);
  CHECK(parseMode("Accurate") == Mode::Accurate);
  CHECK_THROWS_AS(parseMode("turbo"), Error);
}
