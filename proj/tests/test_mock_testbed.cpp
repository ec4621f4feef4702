#include <doctest.h>

#include <random>

#include "mailtls/crypto_params.hpp"
#include "mailtls/errors.hpp"
#include "mailtls/mock_testbed.hpp"
#include "support.hpp"

using namespace mailtls;

namespace {

const Registry& reg() { return Registry::bundled(); }
SuiteId id(std::string_view name) { return reg().find_by_name(name)->id; }

}  // namespace

TEST_SUITE("testbed") {

TEST_CASE("policy JSON keys") {
  auto ps = parse_policies(R"([{
    "protocol": "IMAP",
    "accepted": {"TLSv1": ["AES128-SHA", "EDH-RSA-DES-CBC3-SHA"], "TLSv1.2": ["ECDHE-RSA-AES128-SHA"]},
    "preferenceOrder": ["EDH-RSA-DES-CBC3-SHA"],
    "certChainPem": "mock_chain.pem",
    "dhPrime": "known:nginx-1024",
    "curve": "secp384r1",
    "startTls": {"reject": 502},
    "banner": "silent",
    "ehlo": "heloOnly",
    "authPlainPreTls": true,
    "forceVersion": "SSLv3"
  }, {"refuse": true}, {"dhPrime": "00ff", "curve": 23, "startTls": "strip", "banner": {"reject": 421}}])",
                           reg(), support::cert_dir());
  REQUIRE(ps.size() == 3);
  const auto& p = ps[0];
  CHECK(p.protocol == AppProtocol::IMAP);
  CHECK(p.accepted.size() == 3);
  CHECK(p.accepted.contains({ProtocolVersion::TLSv1_2, id("ECDHE-RSA-AES128-SHA")}));
  CHECK(p.preference_order == std::vector<SuiteId>{id("EDH-RSA-DES-CBC3-SHA")});
  CHECK(p.cert_chain == support::mock_chain());
  CHECK(p.dh_prime == find_known_prime("nginx-1024")->value);
  CHECK(p.curve == 24);
  CHECK(p.starttls == StartTlsBehavior::Reject);
  CHECK(p.starttls_code == 502);
  CHECK(p.banner == BannerBehavior::Silent);
  CHECK(p.ehlo == EhloBehavior::HeloOnly);
  CHECK(p.auth_plain_pre_tls);
  CHECK(p.force_version == ProtocolVersion::SSLv3);
  CHECK(ps[1].refuse);
  CHECK(ps[1].protocol == AppProtocol::SMTP);
  CHECK(ps[2].dh_prime == Bytes{0, 0xff});
  CHECK(ps[2].curve == 23);
  CHECK(ps[2].starttls == StartTlsBehavior::Strip);
  CHECK(ps[2].banner_code == 421);

  auto wrapped = parse_policies(R"({"policies": [{}]})", reg());
  CHECK(wrapped.size() == 1);
}

TEST_CASE("policy errors") {
  CHECK_THROWS_AS(parse_policies("{", reg()), ParseError);
  CHECK_THROWS_AS(parse_policies("{}", reg()), ParseError);
  CHECK_THROWS_AS(parse_policies(R"([{"protocol": "FTP"}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"accepted": {"TLSv9": []}}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"accepted": {"TLSv1": ["NOPE"]}}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"accepted": {"TLSv1": ["DHE-RSA-AES128-SHA"]}}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"accepted": {"TLSv1": ["ECDHE-RSA-AES128-SHA"]}}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"dhPrime": "known:none"}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"dhPrime": "0000"}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"curve": "p999"}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"banner": "loud"}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"ehlo": 5}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"accepted": {"SSLv2": ["AES128-SHA"]}}])", reg()), ConfigError);
  CHECK_THROWS_AS(parse_policies(R"([{"accepted": {"TLSv1": ["SSL2_RC4_128_WITH_MD5"]}}])", reg()), ConfigError);
  CHECK_THROWS_AS(load_policies("/nonexistent/policies.json", reg()), ConfigError);
}

TEST_CASE("mock selection") {
  MockPolicy p;
  auto a = id("AES128-SHA"), b = id("AES256-SHA"), c = id("DES-CBC3-SHA");
  auto v = ProtocolVersion::TLSv1;
  p.accepted = {{v, a}, {v, b}};
  std::vector<SuiteId> offer = {c, b, a};
  CHECK(mock_select(p, v, offer) == b);
  p.preference_order = {c, a, b};
  CHECK(mock_select(p, v, offer) == a);
  CHECK(mock_select(p, ProtocolVersion::TLSv1_2, offer) == std::nullopt);
  CHECK(mock_select(p, v, std::vector<SuiteId>{c}) == std::nullopt);
  p.force_select = c;
  CHECK(mock_select(p, ProtocolVersion::TLSv1_2, std::vector<SuiteId>{a}) == c);
}

TEST_CASE("selection follows the preference order on random policies") {
  std::mt19937_64 rng(31);
  for (int round = 0; round < 50; ++round) {
    auto p = support::random_policy(rng, reg(), AppProtocol::SMTP, {});
    for (auto v : {ProtocolVersion::SSLv3, ProtocolVersion::TLSv1, ProtocolVersion::TLSv1_2}) {
      std::vector<SuiteId> offer;
      for (const auto& e : p.accepted)
        if (e.version == v) offer.push_back(e.suite);
      std::shuffle(offer.begin(), offer.end(), rng);
      if (offer.empty()) continue;
      CHECK(mock_select(p, v, offer) == support::expected_preference(p, v, offer));
    }
  }
}

TEST_CASE("farm addressing") {
  FarmOptions o;
  o.second_octet = 42;
  o.base_port = 30000;
  CHECK(mock_ip(o, 0) == "127.42.0.1");
  CHECK(mock_ip(o, 249) == "127.42.0.250");
  CHECK(mock_ip(o, 250) == "127.42.1.1");
  CHECK_THROWS_AS(mock_ip(o, 250 * 256), ContractViolation);
  CHECK(mock_port(o, AppProtocol::SMTP) == 30000);
  CHECK(mock_port(o, AppProtocol::POP3S) == 30006);
  o.use_standard_ports = true;
  CHECK(mock_port(o, AppProtocol::IMAPS) == 993);
}

TEST_CASE("refusing mock keeps its endpoint") {
  MockPolicy ok, refuse;
  refuse.refuse = true;
  refuse.protocol = AppProtocol::POP3;
  FarmOptions o;
  o.second_octet = 39;
  o.base_port = 21500;
  o.workers = 2;
  MockFarm farm({ok, refuse}, reg(), o);
  REQUIRE(farm.endpoints().size() == 2);
  CHECK(farm.endpoints()[1].ip == "127.39.0.2");
  CHECK(farm.endpoints()[1].port == 21502);
  farm.stop();
}

}  // TEST_SUITE
