#include "phono/fetch.hpp"

#include <curl/curl.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <sstream>
#include <vector>

#include "phono/csv.hpp"
#include "phono/hash.hpp"

namespace phono {

namespace fs = std::filesystem;

fs::path cache_directory() {
  if (const char* dir = std::getenv("PHONO_CACHE_DIR"); dir && *dir) return dir;
  if (const char* home = std::getenv("HOME"); home && *home) return fs::path(home) / ".cache" / "phono";
  return fs::temp_directory_path() / "phono-cache";
}

namespace {

bool is_url(const std::string& source) {
  return source.rfind("http://", 0) == 0 || source.rfind("https://", 0) == 0;
}

std::size_t write_to_stream(char* data, std::size_t size, std::size_t n, void* user) {
  auto* out = static_cast<std::ofstream*>(user);
  out->write(data, static_cast<std::streamsize>(size * n));
  return *out ? size * n : 0;
}

void download(const std::string& url, const fs::path& target) {
  static std::once_flag init;
  std::call_once(init, [] { curl_global_init(CURL_GLOBAL_DEFAULT); });
  std::unique_ptr<CURL, decltype(&curl_easy_cleanup)> curl(curl_easy_init(), curl_easy_cleanup);
  if (!curl) throw FetchError("cannot initialize libcurl");
  std::ofstream out(target, std::ios::binary);
  if (!out) throw FetchError("cannot write " + target.string());
  char error[CURL_ERROR_SIZE] = {};
  curl_easy_setopt(curl.get(), CURLOPT_URL, url.c_str());
  curl_easy_setopt(curl.get(), CURLOPT_WRITEFUNCTION, write_to_stream);
  curl_easy_setopt(curl.get(), CURLOPT_WRITEDATA, &out);
  curl_easy_setopt(curl.get(), CURLOPT_FOLLOWLOCATION, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_FAILONERROR, 1L);
  curl_easy_setopt(curl.get(), CURLOPT_CONNECTTIMEOUT, 30L);
  curl_easy_setopt(curl.get(), CURLOPT_ERRORBUFFER, error);
  const CURLcode rc = curl_easy_perform(curl.get());
  out.close();
  if (rc != CURLE_OK) throw FetchError("download of " + url + " failed: " + (*error ? error : curl_easy_strerror(rc)));
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw FetchError("cannot write " + path.string());
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r') out.back().pop_back();
  return out;
}

std::map<std::string, std::size_t> header_index(const std::vector<std::string>& header) {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < header.size(); ++i) out[header[i]] = i;
  return out;
}

std::size_t require(const std::map<std::string, std::size_t>& index, std::initializer_list<const char*> names) {
  for (const char* n : names)
    if (const auto it = index.find(n); it != index.end()) return it->second;
  throw FetchError(std::string("input table lacks a '") + *names.begin() + "' column");
}

// Writes next to `target` and renames, so readers never see a partial file.
template <typename Fn>
void write_atomically(const fs::path& target, Fn&& fn) {
  const fs::path tmp = target.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw FetchError("cannot write " + tmp.string());
    try {
      fn(out);
    } catch (...) {
      out.close();
      fs::remove(tmp);
      throw;
    }
  }
  fs::rename(tmp, target);
}

}  // namespace

CachedFile cache_source(const std::string& source, const fs::path& cache_dir,
                        const std::optional<std::string>& expected_sha256, bool offline) {
  fs::create_directories(cache_dir);
  const std::string name = sha256_hex(source).substr(0, 16) + "-" + fs::path(source).filename().string();
  const fs::path cached = cache_dir / name;
  const fs::path digest_file = cached.string() + ".sha256";

  if (fs::exists(cached)) {
    const std::string actual = sha256_file(cached);
    std::string expected = expected_sha256.value_or("");
    if (expected.empty() && fs::exists(digest_file)) expected = read_text(digest_file);
    if (!expected.empty() && actual != expected)
      throw FetchError("checksum mismatch for cached " + cached.string() + ": expected " + expected + ", got " + actual);
    return {cached, actual, true};
  }

  const fs::path tmp = cached.string() + ".partial";
  try {
    if (is_url(source)) {
      if (offline) throw FetchError("offline and no cached copy of " + source);
      download(source, tmp);
    } else {
      if (!fs::exists(source)) throw FetchError("no such file: " + source);
      fs::copy_file(source, tmp, fs::copy_options::overwrite_existing);
    }
    const std::string actual = sha256_file(tmp);
    if (expected_sha256 && actual != *expected_sha256)
      throw FetchError("checksum mismatch for " + source + ": expected " + *expected_sha256 + ", got " + actual);
    fs::rename(tmp, cached);
    write_text(digest_file, actual);
    return {cached, actual, false};
  } catch (...) {
    std::error_code ec;
    fs::remove(tmp, ec);
    throw;
  }
}

void convert_forms(std::istream& in, std::ostream& out) {
  std::string line;
  if (!std::getline(in, line)) throw FetchError("empty forms table");
  const auto index = header_index(split_tabs(line));
  const std::size_t lang = require(index, {"language_id", "Language_ID"});
  const std::size_t concept_col = require(index, {"concept_id", "Concept_ID"});
  const std::size_t ipa = require(index, {"ipa", "IPA"});
  std::optional<std::size_t> ortho;
  for (const char* n : {"orthography", "Word_Form"})
    if (const auto it = index.find(n); it != index.end()) ortho = it->second;

  out << "language_id\tconcept_id\tipa\torthography\n";
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_tabs(line);
    const std::size_t needed = std::max({lang, concept_col, ipa, ortho.value_or(0)}) + 1;
    if (f.size() < needed) throw FetchError("forms table line " + std::to_string(line_no) + ": too few columns");
    out << f[lang] << '\t' << f[concept_col] << '\t' << f[ipa] << '\t' << (ortho ? f[*ortho] : "") << '\n';
  }
}

void convert_language_table(std::istream& in, std::ostream& out) {
  std::string line;
  if (!std::getline(in, line)) throw FetchError("empty language table");
  const auto index = header_index(split_tabs(line));
  const std::size_t iso = require(index, {"iso_code", "language_id"});
  const std::size_t family = require(index, {"family", "Family"});
  std::map<std::string, std::string> families;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    const auto f = split_tabs(line);
    if (f.size() <= std::max(iso, family)) throw FetchError("language table row has too few columns");
    families[f[iso]] = f[family];
  }
  csv::write_row(out, {"language_id", "family"});
  for (const auto& [l, fam] : families) csv::write_row(out, {l, fam});
}

FetchResult fetch_data(const FetchOptions& options) {
  if (options.out_dir.empty()) throw FetchError("fetch: no output directory");
  const auto forms = cache_source(options.source, options.cache_dir, options.sha256, options.offline);
  std::optional<CachedFile> languages;
  if (options.languages_source) languages = cache_source(*options.languages_source, options.cache_dir, std::nullopt, options.offline);

  fs::create_directories(options.out_dir);
  FetchResult result;
  result.sha256 = forms.sha256;
  result.from_cache = forms.from_cache;
  result.lexicon = options.out_dir / "lexicon.tsv";
  write_atomically(result.lexicon, [&](std::ostream& out) {
    std::ifstream in(forms.path, std::ios::binary);
    convert_forms(in, out);
  });
  if (languages) {
    result.families = options.out_dir / "families.csv";
    write_atomically(*result.families, [&](std::ostream& out) {
      std::ifstream in(languages->path, std::ios::binary);
      convert_language_table(in, out);
    });
  }
  return result;
}

}  // namespace phono
