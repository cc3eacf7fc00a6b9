#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace gnnbench {

std::string sha256_hex(const std::string& data);

/// INI-style config: `[section]` headers (dotted nesting allowed), `key =
/// value` lines, `#` comment lines. Keys are stored as "section.key" paths.
///
/// Canonical form: comments stripped, whitespace trimmed, keys sorted; the
/// config hash is the SHA-256 of that text, so key order and comments never
/// change a run's identity.
class TrustConfig {
 public:
  TrustConfig() = default;

  static TrustConfig parse_file(const std::string& path);
  static TrustConfig parse_string(const std::string& text,
                                  const std::string& origin = "<string>");

  bool has(const std::string& key) const;
  std::string get_str(const std::string& key) const;
  std::string get_str(const std::string& key, const std::string& dflt) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double dflt) const;
  int64_t get_int(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t dflt) const;
  bool get_bool(const std::string& key, bool dflt) const;
  std::vector<std::string> get_list(const std::string& key) const;  // comma-separated

  void set(const std::string& key, const std::string& value);
  void erase(const std::string& key);
  void erase_section(const std::string& section);
  bool has_section(const std::string& section) const;

  /// Copy holding only the listed sections (prefix match on "section.").
  TrustConfig subset(const std::vector<std::string>& sections) const;

  std::string canonical_text() const;
  std::string hash() const;

  const std::map<std::string, std::string>& entries() const { return kv_; }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace gnnbench
