#include "core/config.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace gnnbench {

std::string sha256_hex(const std::string& data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256: digest failure");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[md[i] >> 4]);
    out.push_back(hex[md[i] & 0xF]);
  }
  return out;
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

}  // namespace

TrustConfig TrustConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

TrustConfig TrustConfig::parse_string(const std::string& text, const std::string& origin) {
  TrustConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int64_t ln = 0;
  while (std::getline(in, line)) {
    ++ln;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::runtime_error(origin + ":" + std::to_string(ln) + ": unterminated section");
      section = trim(t.substr(1, t.size() - 2));
      if (section.empty())
        throw std::runtime_error(origin + ":" + std::to_string(ln) + ": empty section name");
      continue;
    }
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(ln) + ": expected 'key = value': " +
                               t);
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error(origin + ":" + std::to_string(ln) + ": empty key");
    std::string full = section.empty() ? key : section + "." + key;
    cfg.kv_[full] = value;
  }
  return cfg;
}

bool TrustConfig::has(const std::string& key) const { return kv_.count(key) > 0; }

std::string TrustConfig::get_str(const std::string& key) const {
  auto it = kv_.find(key);
  if (it == kv_.end()) throw std::runtime_error("config: missing key '" + key + "'");
  return it->second;
}

std::string TrustConfig::get_str(const std::string& key, const std::string& dflt) const {
  auto it = kv_.find(key);
  return it == kv_.end() ? dflt : it->second;
}

double TrustConfig::get_double(const std::string& key) const {
  const std::string s = get_str(key);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error("config: key '" + key + "' is not a number: '" + s + "'");
  return v;
}

double TrustConfig::get_double(const std::string& key, double dflt) const {
  return has(key) ? get_double(key) : dflt;
}

int64_t TrustConfig::get_int(const std::string& key) const {
  const std::string s = get_str(key);
  int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size())
    throw std::runtime_error("config: key '" + key + "' is not an integer: '" + s + "'");
  return v;
}

int64_t TrustConfig::get_int(const std::string& key, int64_t dflt) const {
  return has(key) ? get_int(key) : dflt;
}

bool TrustConfig::get_bool(const std::string& key, bool dflt) const {
  if (!has(key)) return dflt;
  const std::string s = get_str(key);
  if (s == "on" || s == "true" || s == "1" || s == "yes") return true;
  if (s == "off" || s == "false" || s == "0" || s == "no") return false;
  throw std::runtime_error("config: key '" + key + "' is not a boolean: '" + s + "'");
}

std::vector<std::string> TrustConfig::get_list(const std::string& key) const {
  std::vector<std::string> out;
  std::string s = get_str(key);
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      std::string t = trim(cur);
      if (!t.empty()) out.push_back(t);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  std::string t = trim(cur);
  if (!t.empty()) out.push_back(t);
  return out;
}

void TrustConfig::set(const std::string& key, const std::string& value) { kv_[key] = value; }

void TrustConfig::erase(const std::string& key) { kv_.erase(key); }

void TrustConfig::erase_section(const std::string& section) {
  const std::string prefix = section + ".";
  for (auto it = kv_.begin(); it != kv_.end();) {
    if (it->first.rfind(prefix, 0) == 0)
      it = kv_.erase(it);
    else
      ++it;
  }
}

bool TrustConfig::has_section(const std::string& section) const {
  const std::string prefix = section + ".";
  auto it = kv_.lower_bound(prefix);
  return it != kv_.end() && it->first.rfind(prefix, 0) == 0;
}

TrustConfig TrustConfig::subset(const std::vector<std::string>& sections) const {
  TrustConfig out;
  for (const auto& [k, v] : kv_)
    for (const auto& s : sections)
      if (k.rfind(s + ".", 0) == 0) {
        out.kv_[k] = v;
        break;
      }
  return out;
}

std::string TrustConfig::canonical_text() const {
  std::string out;
  for (const auto& [k, v] : kv_) {  // std::map iterates in key order
    out += k;
    out += " = ";
    out += v;
    out += '\n';
  }
  return out;
}

std::string TrustConfig::hash() const { return sha256_hex(canonical_text()); }

}  // namespace gnnbench
