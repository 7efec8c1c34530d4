#include "caleido/prompt.hpp"

#include <cstdlib>

#include "caleido/error.hpp"
#include "caleido/store.hpp"

namespace caleido {

namespace {

constexpr std::string_view kChatContextLabel = "Context: ";

std::string section(std::string_view label) { return "### " + std::string(label) + ":\n"; }

}  // namespace

std::string_view strategy_name(PromptStrategy s) {
  return s == PromptStrategy::FineTuneInstruction ? "finetune-instruction" : "system-prompt-chat";
}

std::optional<PromptStrategy> strategy_from_name(std::string_view name) {
  if (name == "finetune-instruction" || name == "finetune") {
    return PromptStrategy::FineTuneInstruction;
  }
  if (name == "system-prompt-chat" || name == "chat") return PromptStrategy::SystemPromptChat;
  return std::nullopt;
}

std::string_view role_name(ChatRole r) {
  switch (r) {
    case ChatRole::System: return "system";
    case ChatRole::User: return "user";
    case ChatRole::Assistant: return "assistant";
  }
  return "user";
}

std::optional<ChatRole> role_from_name(std::string_view name) {
  for (auto r : {ChatRole::System, ChatRole::User, ChatRole::Assistant}) {
    if (role_name(r) == name) return r;
  }
  return std::nullopt;
}

std::string render_finetune_prompt(const DatasetExample& example, std::string_view instruction) {
  if (example.context.empty()) {
    throw Error(Errc::EmptyContext, "fine-tune prompt needs a non-empty context");
  }
  if (example.input.empty()) throw Error(Errc::InvalidMessage, "fine-tune prompt needs an input");
  std::string out;
  out += section(kFineTuneSections[0]);
  out += instruction;
  out += "\n\n";
  out += section(kFineTuneSections[1]);
  out += example.input;
  out += "\n\n";
  out += section(kFineTuneSections[2]);
  out += example.context;
  out += "\n\n";
  out += section(kFineTuneSections[3]);
  return out;
}

std::string render_finetune_training_text(const DatasetExample& example,
                                          std::string_view instruction) {
  return render_finetune_prompt(example, instruction) + example.output;
}

std::vector<ChatMessage> render_chat_prompt(std::string_view system, std::string_view user_request,
                                            std::string_view context) {
  if (system.empty()) throw Error(Errc::EmptySystemPrompt, "system prompt is empty");
  if (user_request.empty()) throw Error(Errc::InvalidMessage, "user request is empty");
  if (context.empty()) throw Error(Errc::EmptyContext, "context is empty");
  std::string user(user_request);
  user += "\n\n";
  user += kChatContextLabel;
  user += context;
  return {{ChatRole::System, std::string(system)}, {ChatRole::User, std::move(user)}};
}

std::optional<std::string> extract_context_section(std::string_view prompt) {
  const std::string header = section(kFineTuneSections[2]);
  if (auto at = prompt.rfind(header); at != std::string_view::npos) {
    const std::size_t start = at + header.size();
    std::size_t end = prompt.find("\n\n### ", start);
    if (end == std::string_view::npos) end = prompt.size();
    return std::string(prompt.substr(start, end - start));
  }
  // Chat form: a line starting with "Context: ".
  std::size_t line = 0;
  std::optional<std::string> found;
  while (line <= prompt.size()) {
    std::size_t end = prompt.find('\n', line);
    if (end == std::string_view::npos) end = prompt.size();
    const auto text = prompt.substr(line, end - line);
    if (text.substr(0, kChatContextLabel.size()) == kChatContextLabel) {
      found = std::string(text.substr(kChatContextLabel.size()));
    }
    line = end + 1;
  }
  return found;
}

std::filesystem::path config_dir() {
  if (const char* env = std::getenv("CALEIDO_CONFIG_DIR"); env && *env) return env;
  return CALEIDO_CONFIG_DIR;
}

std::string load_system_prompt(const std::optional<std::filesystem::path>& path) {
  std::string text = read_file(path ? *path : config_dir() / "system_prompt.txt");
  while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
  if (text.empty()) throw Error(Errc::EmptySystemPrompt, "system prompt file is empty");
  return text;
}

nlohmann::json to_json(const ChatMessage& m) {
  return {{"role", std::string(role_name(m.role))}, {"content", m.content}};
}

ChatMessage message_from_json(const nlohmann::json& j) {
  try {
    auto role = role_from_name(j.at("role").get<std::string>());
    if (!role) throw Error(Errc::InvalidMessage, "unknown role", "/role");
    ChatMessage m{*role, j.at("content").get<std::string>()};
    if (m.content.empty()) throw Error(Errc::InvalidMessage, "empty message content", "/content");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidMessage, std::string("bad chat message: ") + e.what());
  }
}

}  // namespace caleido
