#include <algorithm>
#include <fstream>
#include <set>

#include "caleido/error.hpp"
#include "caleido/prompt.hpp"
#include "caleido/store.hpp"

namespace caleido {

using nlohmann::json;

const RoleRule* ChatTemplate::rule_for(ChatRole r) const {
  for (const auto& rule : rules) {
    if (rule.role == r) return &rule;
  }
  return nullptr;
}

namespace {

[[noreturn]] void invalid(const ChatTemplate& t, const std::string& why) {
  throw Error(Errc::InvalidTemplate, "template '" + t.name + "': " + why);
}

bool starts_with_at(std::string_view s, std::size_t i, std::string_view p) {
  return !p.empty() && s.size() - i >= p.size() && s.compare(i, p.size(), p) == 0;
}

std::vector<std::string_view> delimiters(const ChatTemplate& t) {
  std::vector<std::string_view> out;
  for (const auto& r : t.rules) {
    if (!r.prefix.empty()) out.push_back(r.prefix);
    if (!r.suffix.empty()) out.push_back(r.suffix);
  }
  return out;
}

// An escape goes before every content byte where a delimiter starts, and
// before every byte whose remaining tail is a proper prefix of a delimiter
// (it could join the following delimiter). The escape byte escapes itself.
std::string escape_content(std::string_view content, const ChatTemplate& t) {
  const auto delims = delimiters(t);
  std::string out;
  out.reserve(content.size() + 8);
  for (std::size_t i = 0; i < content.size(); ++i) {
    const char c = content[i];
    bool escape = c == t.escape;
    const std::string_view tail = content.substr(i);
    for (std::size_t k = 0; !escape && k < delims.size(); ++k) {
      const auto d = delims[k];
      if (tail.size() >= d.size()) {
        escape = tail.compare(0, d.size(), d) == 0;
      } else {
        escape = d.compare(0, tail.size(), tail) == 0;
      }
    }
    if (escape) out += t.escape;
    out += c;
  }
  return out;
}

}  // namespace

void validate_template(const ChatTemplate& t) {
  if (t.name.empty()) invalid(t, "name is empty");
  std::set<ChatRole> roles;
  for (const auto& r : t.rules) {
    if (!roles.insert(r.role).second) invalid(t, "role '" + std::string(role_name(r.role)) + "' twice");
  }
  if (!roles.count(ChatRole::User) || !roles.count(ChatRole::Assistant)) {
    invalid(t, "user and assistant rules are required");
  }
  if (t.supports_system != (roles.count(ChatRole::System) != 0)) {
    invalid(t, "a system rule must be present exactly when supports_system is true");
  }
  int empty_prefixes = 0;
  bool empty_suffix = false;
  for (const auto& r : t.rules) {
    if (r.prefix.empty()) {
      ++empty_prefixes;
      if (r.suffix.empty()) invalid(t, "a role with an empty prefix needs a suffix");
    }
    if (r.suffix.empty()) empty_suffix = true;
    if (r.prefix.find(t.escape) != std::string::npos ||
        r.suffix.find(t.escape) != std::string::npos) {
      invalid(t, "escape byte occurs in a delimiter");
    }
  }
  if (empty_prefixes > 1) invalid(t, "at most one role may have an empty prefix");
  if (empty_prefixes == 1 && empty_suffix) {
    invalid(t, "empty suffixes are not allowed alongside an empty prefix");
  }
  for (const auto& a : t.rules) {
    for (const auto& b : t.rules) {
      if (&a == &b || a.prefix.empty() || b.prefix.empty()) continue;
      if (b.prefix.compare(0, a.prefix.size(), a.prefix) == 0) {
        invalid(t, "prefix of '" + std::string(role_name(a.role)) + "' is a prefix of '" +
                       std::string(role_name(b.role)) + "'");
      }
    }
  }
}

std::string apply_chat_template(const std::vector<ChatMessage>& messages, const ChatTemplate& t) {
  validate_template(t);
  std::string out;
  for (const auto& m : messages) {
    const RoleRule* rule = t.rule_for(m.role);
    if (m.role == ChatRole::System && !t.supports_system) {
      throw Error(Errc::UnsupportedRole,
                  "template '" + t.name + "' does not support the system role");
    }
    if (rule == nullptr) {
      throw Error(Errc::UnsupportedRole, "template '" + t.name + "' has no rule for role '" +
                                             std::string(role_name(m.role)) + "'");
    }
    if (m.content.empty()) throw Error(Errc::InvalidMessage, "message content is empty");
    out += rule->prefix;
    out += escape_content(m.content, t);
    out += rule->suffix;
  }
  return out;
}

std::vector<ChatMessage> decode_chat_text(std::string_view text, const ChatTemplate& t) {
  validate_template(t);
  const RoleRule* empty_prefix_rule = nullptr;
  for (const auto& r : t.rules) {
    if (r.prefix.empty()) empty_prefix_rule = &r;
  }
  auto prefix_at = [&](std::size_t i) -> const RoleRule* {
    for (const auto& r : t.rules) {
      if (starts_with_at(text, i, r.prefix)) return &r;
    }
    return nullptr;
  };
  auto fail = [](std::size_t i, const std::string& why) -> Error {
    return Error(Errc::InvalidMessage, why + " at byte " + std::to_string(i), {}, i);
  };

  std::vector<ChatMessage> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const RoleRule* rule = prefix_at(i);
    if (rule == nullptr) rule = empty_prefix_rule;
    if (rule == nullptr) throw fail(i, "no role prefix");
    i += rule->prefix.size();
    std::string content;
    bool closed = false;
    while (i < text.size()) {
      if (text[i] == t.escape) {
        if (i + 1 >= text.size()) throw fail(i, "dangling escape");
        content += text[i + 1];
        i += 2;
        continue;
      }
      if (!rule->suffix.empty()) {
        if (starts_with_at(text, i, rule->suffix)) {
          i += rule->suffix.size();
          closed = true;
          break;
        }
      } else if (prefix_at(i) != nullptr) {
        closed = true;
        break;
      }
      content += text[i++];
    }
    if (!closed && !rule->suffix.empty()) throw fail(i, "unterminated message");
    if (content.empty()) throw fail(i, "empty message");
    out.push_back({rule->role, std::move(content)});
  }
  return out;
}

json to_json(const ChatTemplate& t) {
  json rules = json::array();
  for (const auto& r : t.rules) {
    rules.push_back(
        {{"role", std::string(role_name(r.role))}, {"prefix", r.prefix}, {"suffix", r.suffix}});
  }
  return {{"name", t.name},
          {"supports_system", t.supports_system},
          {"escape", std::string(1, t.escape)},
          {"rules", std::move(rules)}};
}

ChatTemplate template_from_json(const json& j) {
  try {
    ChatTemplate t;
    t.name = j.at("name").get<std::string>();
    t.supports_system = j.at("supports_system").get<bool>();
    const auto escape = j.value("escape", std::string("\\"));
    if (escape.size() != 1) throw Error(Errc::InvalidTemplate, "escape must be one byte");
    t.escape = escape[0];
    for (const auto& r : j.at("rules")) {
      auto role = role_from_name(r.at("role").get<std::string>());
      if (!role) throw Error(Errc::InvalidTemplate, "unknown role in template rule");
      t.rules.push_back(
          {*role, r.value("prefix", std::string()), r.value("suffix", std::string())});
    }
    validate_template(t);
    return t;
  } catch (const json::exception& e) {
    throw Error(Errc::InvalidTemplate, std::string("bad chat template: ") + e.what());
  }
}

ChatTemplate load_template(std::string_view name_or_path) {
  std::filesystem::path path(name_or_path);
  if (!std::filesystem::exists(path)) {
    path = config_dir() / "templates" / (std::string(name_or_path) + ".json");
  }
  if (!std::filesystem::exists(path)) {
    throw Error(Errc::NotFound, "no chat template '" + std::string(name_or_path) + "'");
  }
  try {
    return template_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw Error(Errc::InvalidTemplate, path.string() + ": " + e.what());
  }
}

}  // namespace caleido
