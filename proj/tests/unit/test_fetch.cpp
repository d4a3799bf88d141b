#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "phono/fetch.hpp"
#include "phono/hash.hpp"

using namespace phono;
namespace fs = std::filesystem;

namespace {

const char* kForms =
    "ID\tLanguage_ID\tGlottocode\tConcept_ID\tWord_Form\trawIPA\tIPA\n"
    "1\tfin\tfinn1318\tAuge::N\tsilmä\tsilmæ\ts i l m æ\n"
    "2\tdeu\tstan1295\tHund::N\tHund\thʊnt\th ʊ n t\n";

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::size_t file_count(const fs::path& dir) {
  if (!fs::exists(dir)) return 0;
  return static_cast<std::size_t>(std::distance(fs::directory_iterator(dir), fs::directory_iterator()));
}

}  // namespace

TEST_CASE("forms table conversion keeps the tokenized IPA and the spelling") {
  std::istringstream in(kForms);
  std::ostringstream out;
  convert_forms(in, out);
  CHECK(out.str() ==
        "language_id\tconcept_id\tipa\torthography\n"
        "fin\tAuge::N\ts i l m æ\tsilmä\n"
        "deu\tHund::N\th ʊ n t\tHund\n");

  std::istringstream bad("Language_ID\tIPA\nfin\ts i\n");
  std::ostringstream sink;
  CHECK_THROWS_AS(convert_forms(bad, sink), FetchError);
}

TEST_CASE("language table becomes a sorted family map") {
  std::istringstream in("iso_code\tname\tfamily\nfin\tFinnish\tUralic\ndeu\tGerman\tIndo-European\n");
  std::ostringstream out;
  convert_language_table(in, out);
  CHECK(out.str() == "language_id,family\ndeu,Indo-European\nfin,Uralic\n");
}

TEST_CASE("local fetch verifies the digest and reuses the cache") {
  TempDir dir("phono_fetch_local");
  const fs::path src = dir.path / "forms.tsv";
  std::ofstream(src, std::ios::binary) << kForms;
  const std::string digest = sha256_hex(kForms);

  FetchOptions o;
  o.source = src.string();
  o.sha256 = digest;
  o.cache_dir = dir.path / "cache";
  o.out_dir = dir.path / "out";
  const auto first = fetch_data(o);
  CHECK_FALSE(first.from_cache);
  CHECK(first.sha256 == digest);
  CHECK(slurp(first.lexicon).find("fin\tAuge::N\ts i l m æ\tsilmä") != std::string::npos);

  const auto second = fetch_data(o);
  CHECK(second.from_cache);
  CHECK(slurp(second.lexicon) == slurp(first.lexicon));

  SUBCASE("a corrupted cache entry is rejected") {
    fs::path cached;
    for (const auto& e : fs::directory_iterator(o.cache_dir))
      if (e.path().extension() == ".tsv") cached = e.path();
    std::ofstream(cached, std::ios::app) << "fin\tx\ty\tz\n";
    CHECK_THROWS_AS(fetch_data(o), FetchError);
  }
}

TEST_CASE("checksum mismatch leaves nothing behind") {
  TempDir dir("phono_fetch_mismatch");
  const fs::path src = dir.path / "forms.tsv";
  std::ofstream(src, std::ios::binary) << kForms;

  FetchOptions o;
  o.source = src.string();
  o.sha256 = std::string(64, '0');
  o.cache_dir = dir.path / "cache";
  o.out_dir = dir.path / "out";
  CHECK_THROWS_AS(fetch_data(o), FetchError);
  CHECK(file_count(o.cache_dir) == 0);
  CHECK_FALSE(fs::exists(o.out_dir / "lexicon.tsv"));
}

TEST_CASE("http download, then cache only") {
  TempDir dir("phono_fetch_http");
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Get("/forms.tsv", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.set_content(kForms, "text/tab-separated-values");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  FetchOptions o;
  o.source = "http://127.0.0.1:" + std::to_string(port) + "/forms.tsv";
  o.cache_dir = dir.path / "cache";
  o.out_dir = dir.path / "out";
  const auto first = fetch_data(o);
  CHECK_FALSE(first.from_cache);
  CHECK(hits == 1);
  server.stop();
  worker.join();

  // The server is gone: a second fetch must not need it.
  o.offline = true;
  const auto second = fetch_data(o);
  CHECK(second.from_cache);
  CHECK(second.sha256 == sha256_hex(kForms));

  o.source = "http://127.0.0.1:" + std::to_string(port) + "/other.tsv";
  CHECK_THROWS_AS(fetch_data(o), FetchError);
}

TEST_CASE("a failed download is not cached") {
  TempDir dir("phono_fetch_404");
  httplib::Server server;
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  FetchOptions o;
  o.source = "http://127.0.0.1:" + std::to_string(port) + "/missing.tsv";
  o.cache_dir = dir.path / "cache";
  o.out_dir = dir.path / "out";
  CHECK_THROWS_AS(fetch_data(o), FetchError);
  server.stop();
  worker.join();
  CHECK(file_count(o.cache_dir) == 0);
}
