#include <doctest.h>

#include <openssl/ssl.h>

#include <memory>

#include "mailtls/cipher_registry.hpp"
#include "mailtls/errors.hpp"

using namespace mailtls;

TEST_SUITE("registry") {

TEST_CASE("default plan has 551 entries split 7/136/136/136/136") {
  auto plan = default_probe_plan(Registry::bundled());
  CHECK(plan.entries.size() == 551);
  CHECK(plan.count(ProtocolVersion::SSLv2) == 7);
  for (auto v : {ProtocolVersion::SSLv3, ProtocolVersion::TLSv1, ProtocolVersion::TLSv1_1, ProtocolVersion::TLSv1_2})
    CHECK(plan.count(v) == 136);
  CHECK(plan.restricted_to({ProtocolVersion::TLSv1_2}).entries.size() == 136);
  // Stable order between calls.
  CHECK(default_probe_plan(Registry::bundled()).entries == plan.entries);
}

TEST_CASE("default suite lists are distinct and in the bundled registry") {
  const auto& reg = Registry::bundled();
  std::set<SuiteId> tls(default_tls_suites().begin(), default_tls_suites().end());
  CHECK(tls.size() == 136);
  for (auto s : default_sslv2_suites()) {
    CHECK(s.is_sslv2());
    REQUIRE(reg.find(s));
  }
  for (auto s : tls) {
    CHECK_FALSE(s.is_sslv2());
    REQUIRE(reg.find(s));
  }
}

TEST_CASE("classify") {
  const auto& reg = Registry::bundled();
  auto e = reg.classify(SuiteId::tls(0x0016));
  REQUIRE(e);
  CHECK(e->kex == KeyExchange::DHE_RSA);
  CHECK(e->enc == "3DES-168");
  CHECK(e->mac == Mac::SHA1);
  CHECK_FALSE(reg.classify(SuiteId::tls(0xffff)));

  const auto* exp = reg.find_by_name("EXP-RC4-MD5");
  REQUIRE(exp);
  CHECK(exp->export_grade);
  CHECK(exp->enc_key_bits == 40);
  CHECK_FALSE(exp->id.is_sslv2());  // aliases prefer the SSLv3+ entry
}

TEST_CASE("every entry survives a load/lookup round trip") {
  const auto& reg = Registry::bundled();
  for (const auto& e : reg.entries()) {
    auto c = reg.classify(e.id);
    REQUIRE(c);
    CHECK(*c == e);
    CHECK(reg.find_by_name(e.name) == reg.find(e.id));
    CHECK(SuiteId::from_hex(e.id.to_hex()) == e.id);
  }
}

TEST_CASE("names agree with the OpenSSL cipher table where OpenSSL knows the suite") {
  std::unique_ptr<SSL_CTX, decltype(&SSL_CTX_free)> ctx(SSL_CTX_new(TLS_method()), SSL_CTX_free);
  std::unique_ptr<SSL, decltype(&SSL_free)> ssl(SSL_new(ctx.get()), SSL_free);
  int known = 0;
  for (auto s : default_tls_suites()) {
    auto b = s.bytes();
    const SSL_CIPHER* c = SSL_CIPHER_find(ssl.get(), b.data());
    if (!c) continue;
    ++known;
    const auto* e = Registry::bundled().find(s);
    CHECK_MESSAGE(e->name == SSL_CIPHER_standard_name(c), s.to_hex());
  }
  // OpenSSL 3 still carries the bulk of the pre-1.3 table.
  CHECK(known >= 60);
}

TEST_CASE("preference candidates drop CAMELLIA and 3DES") {
  auto c = default_preference_candidates(Registry::bundled());
  CHECK(!c.empty());
  CHECK(c.size() < 136);
  for (auto s : c) {
    const auto* e = Registry::bundled().find(s);
    CHECK_FALSE(e->enc.starts_with("CAMELLIA"));
    CHECK_FALSE(e->enc.starts_with("3DES"));
  }
}

TEST_CASE("registry parse errors name the line") {
  const std::string header = "id,name,kex,enc,encKeyBits,mac,exportGrade,versions,alias\n";
  const std::string row = "0004,TLS_RSA_WITH_RC4_128_MD5,RSA,RC4-128,128,MD5,false,SSLv3;TLSv1,RC4-MD5\n";
  CHECK(Registry::parse(header + row).size() == 1);
  try {
    Registry::parse(header + row + row);
    FAIL("duplicate id accepted");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(Registry::parse(header + "zz,X,RSA,NULL,0,MD5,false,SSLv3,\n"), ParseError);
  CHECK_THROWS_AS(Registry::parse(header + "0004,X,FOO,NULL,0,MD5,false,SSLv3,\n"), ParseError);
  CHECK_THROWS_AS(Registry::parse(header + "0004,X,RSA\n"), ParseError);
}

TEST_CASE("plan needs every default suite") {
  const std::string header = "id,name,kex,enc,encKeyBits,mac,exportGrade,versions,alias\n";
  auto reg = Registry::parse(header + "0004,TLS_RSA_WITH_RC4_128_MD5,RSA,RC4-128,128,MD5,false,SSLv3,RC4-MD5\n");
  CHECK_THROWS_AS(default_probe_plan(reg), ConfigError);
}

TEST_CASE("probe plan file") {
  const auto& reg = Registry::bundled();
  auto plan = parse_probe_plan("id,version\n# comment\n0004,TLSv1\n002f,TLSv1.2\n010080,SSLv2\n", reg);
  REQUIRE(plan.entries.size() == 3);
  CHECK(plan.entries[0] == ProbeEntry{ProtocolVersion::TLSv1, SuiteId::tls(0x0004)});
  CHECK(plan.entries[2] == ProbeEntry{ProtocolVersion::SSLv2, SuiteId::sslv2(0x010080)});
  CHECK_THROWS_AS(parse_probe_plan("id,version\nffff,TLSv1\n", reg), ParseError);
  CHECK_THROWS_AS(parse_probe_plan("id,version\n0004,TLSv9\n", reg), ParseError);
  CHECK_THROWS_AS(parse_probe_plan("id\n0004\n", reg), ParseError);
}

TEST_CASE("version wire bytes") {
  CHECK(wire_bytes(ProtocolVersion::TLSv1_2) == std::array<std::uint8_t, 2>{3, 3});
  CHECK(version_from_wire(3, 0) == ProtocolVersion::SSLv3);
  CHECK_FALSE(version_from_wire(3, 4));
  for (auto v : kAllVersions) CHECK(parse_version(to_string(v)) == v);
}

}  // TEST_SUITE
