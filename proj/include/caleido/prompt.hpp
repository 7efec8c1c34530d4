#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "caleido/dataset.hpp"
#include "json.hpp"

namespace caleido {

enum class PromptStrategy { FineTuneInstruction, SystemPromptChat };

std::string_view strategy_name(PromptStrategy s);
/// Accepts the canonical names and the short forms "finetune" / "chat".
std::optional<PromptStrategy> strategy_from_name(std::string_view name);

enum class ChatRole { System, User, Assistant };

std::string_view role_name(ChatRole r);
std::optional<ChatRole> role_from_name(std::string_view name);

struct ChatMessage {
  ChatRole role;
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

// ---------------------------------------------------------------------------
// Fine-tune instruction prompt

/// Section labels of the fine-tune prompt, in order. All but the first match
/// the dataset export keys (case-folded).
inline constexpr std::array<std::string_view, 4> kFineTuneSections = {"Instruction", "Input",
                                                                      "Context", "Output"};

inline constexpr std::string_view kDefaultInstruction =
    "Write an engaging description of the accommodation named in the input. Use every "
    "feature listed in the context and nothing that is not listed there.";

/// Renders "### Instruction:", "### Input:", "### Context:" and the trailing
/// "### Output:" cue. Throws EmptyContext, InvalidMessage (empty input).
std::string render_finetune_prompt(const DatasetExample& example,
                                   std::string_view instruction = kDefaultInstruction);

/// The training text for one example: the prompt followed by its output.
std::string render_finetune_training_text(const DatasetExample& example,
                                          std::string_view instruction = kDefaultInstruction);

// ---------------------------------------------------------------------------
// Chat prompt

/// [system, user]; the user message carries the request then the context.
/// Throws EmptySystemPrompt, InvalidMessage, EmptyContext.
std::vector<ChatMessage> render_chat_prompt(std::string_view system, std::string_view user_request,
                                            std::string_view context);

/// Recovers the context embedded by either renderer, or nullopt.
std::optional<std::string> extract_context_section(std::string_view prompt);

/// Reads the shipped default system prompt (config/system_prompt.txt) or
/// the file named by `path`. Trailing newlines are dropped.
std::string load_system_prompt(const std::optional<std::filesystem::path>& path = std::nullopt);

// ---------------------------------------------------------------------------
// Chat templates

struct RoleRule {
  ChatRole role;
  std::string prefix;
  std::string suffix;

  bool operator==(const RoleRule&) const = default;
};

struct ChatTemplate {
  std::string name;
  std::vector<RoleRule> rules;
  bool supports_system = false;
  // Inserted before content bytes that could be read as a delimiter.
  char escape = '\\';

  const RoleRule* rule_for(ChatRole r) const;
};

/// Throws InvalidTemplate. Requirements: user and assistant rules; a system
/// rule iff supports_system; unique roles; non-empty prefixes prefix-free;
/// at most one empty prefix, whose role needs a suffix; empty suffixes only
/// when no prefix is empty; escape byte absent from every delimiter.
void validate_template(const ChatTemplate& t);

/// Concatenates prefix + escaped content + suffix per message. Throws
/// UnsupportedRole for a system message on a template without system
/// support, InvalidMessage for empty content.
std::string apply_chat_template(const std::vector<ChatMessage>& messages, const ChatTemplate& t);

/// Inverse of apply_chat_template. Throws InvalidMessage on text the
/// template could not have produced.
std::vector<ChatMessage> decode_chat_text(std::string_view text, const ChatTemplate& t);

nlohmann::json to_json(const ChatTemplate& t);
ChatTemplate template_from_json(const nlohmann::json& j);
/// Loads config/templates/<name>.json, or a path when `name_or_path` names a file.
ChatTemplate load_template(std::string_view name_or_path);

nlohmann::json to_json(const ChatMessage& m);
ChatMessage message_from_json(const nlohmann::json& j);

std::filesystem::path config_dir();

}  // namespace caleido
