#include <doctest.h>

#include "caleido/error.hpp"
#include "caleido/prompt.hpp"
#include "generators.hpp"
#include "support.hpp"

using namespace caleido;

namespace {

const DatasetExample kExample{
    "Write me a hotel brochure for the hotel Hotel Aurora in Naples.",
    "Recreation: Outdoor swimming pool, Spa with sauna; Dining: Breakfast buffet, Pool bar; "
    "Nearby POIs: The beach is 300 m away",
    "Hotel Aurora sits by the sea.", "NW-001", Split::Test};

Errc code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected caleido::Error");
  return Errc::Usage;
}

ChatTemplate stock() { return load_template("mixtral-stock"); }
ChatTemplate with_system() { return load_template("mixtral-system"); }

}  // namespace

TEST_SUITE("prompt") {

TEST_CASE("fine-tune prompt matches the golden file") {
  CHECK(render_finetune_prompt(kExample) == testing::slurp("golden/finetune_prompt.txt"));
  CHECK(render_finetune_training_text(kExample) ==
        testing::slurp("golden/finetune_prompt.txt") + kExample.output);
  CHECK(extract_context_section(render_finetune_prompt(kExample)) == kExample.context);
}

TEST_CASE("fine-tune prompt errors") {
  auto e = kExample;
  e.context.clear();
  CHECK(code_of([&] { render_finetune_prompt(e); }) == Errc::EmptyContext);
  e = kExample;
  e.input.clear();
  CHECK(code_of([&] { render_finetune_prompt(e); }) == Errc::InvalidMessage);
}

TEST_CASE("chat prompt matches the golden file") {
  const auto messages = render_chat_prompt(load_system_prompt(), kExample.input, kExample.context);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& m : messages) j.push_back(to_json(m));
  CHECK(j == nlohmann::json::parse(testing::slurp("golden/chat_prompt.json")));
  CHECK(extract_context_section(messages[1].content) == kExample.context);
  CHECK_FALSE(extract_context_section("no context here"));

  CHECK(code_of([] { render_chat_prompt("", "a", "b"); }) == Errc::EmptySystemPrompt);
  CHECK(code_of([] { render_chat_prompt("s", "", "b"); }) == Errc::InvalidMessage);
  CHECK(code_of([] { render_chat_prompt("s", "a", ""); }) == Errc::EmptyContext);
}

TEST_CASE("system-capable template renders the golden text") {
  const auto messages = render_chat_prompt(load_system_prompt(), kExample.input, kExample.context);
  CHECK(apply_chat_template(messages, with_system()) ==
        testing::slurp("golden/chat_template_mixtral_system.txt"));
}

TEST_CASE("stock template rejects the system role") {
  const auto messages = render_chat_prompt(load_system_prompt(), kExample.input, kExample.context);
  CHECK(code_of([&] { apply_chat_template(messages, stock()); }) == Errc::UnsupportedRole);
  const std::vector<ChatMessage> user_only{messages[1]};
  CHECK(apply_chat_template(user_only, stock()) == "[INST] " + messages[1].content + " [/INST]");
}

TEST_CASE("shipped templates load and validate") {
  for (const char* name : {"chatml", "mixtral-stock", "mixtral-system"}) {
    const auto t = load_template(name);
    CHECK_NOTHROW(validate_template(t));
    CHECK(to_json(template_from_json(to_json(t))) == to_json(t));
  }
  CHECK(code_of([] { load_template("nope"); }) == Errc::NotFound);
}

TEST_CASE("template validation") {
  const auto base = with_system();
  auto code = [](const ChatTemplate& t) { return code_of([&] { validate_template(t); }); };

  auto t = base;
  t.supports_system = false;
  CHECK(code(t) == Errc::InvalidTemplate);

  t = stock();
  t.rules.erase(t.rules.begin());
  CHECK(code(t) == Errc::InvalidTemplate);

  t = base;
  t.rules.push_back(t.rules[1]);
  CHECK(code(t) == Errc::InvalidTemplate);

  t = base;
  t.rules[0].prefix = "[INST]";  // prefix of the user prefix
  CHECK(code(t) == Errc::InvalidTemplate);

  t = base;
  t.rules[1].suffix = "\\end";
  CHECK(code(t) == Errc::InvalidTemplate);

  t = stock();
  t.rules[1].suffix.clear();  // empty prefix and empty suffix
  CHECK(code(t) == Errc::InvalidTemplate);

  t = stock();
  t.rules[0].prefix.clear();  // two empty prefixes
  CHECK(code(t) == Errc::InvalidTemplate);

  t = base;
  t.name.clear();
  CHECK(code(t) == Errc::InvalidTemplate);

  CHECK(code_of([] {
          template_from_json({{"name", "x"}, {"supports_system", false}, {"escape", "ab"}, {"rules", nlohmann::json::array()}});
        }) == Errc::InvalidTemplate);
}

TEST_CASE("empty message content is rejected") {
  const std::vector<ChatMessage> empty{{ChatRole::User, ""}};
  CHECK(code_of([&] { apply_chat_template(empty, stock()); }) == Errc::InvalidMessage);
}

TEST_CASE("escaping makes the template encoding injective") {
  testing::Rng rng(99);
  const std::vector<std::string> alphabet = {"a", " ", "\n", "\\", "[", "]", "/", "<", ">", "s",
                                             "[INST] ", " [/INST]", "</s>", "<<SYS>>\n",
                                             "\n<</SYS>>\n\n", "<|im_start|>", "<|im_end|>\n", "é"};
  for (const char* name : {"chatml", "mixtral-stock", "mixtral-system"}) {
    const auto t = load_template(name);
    for (int i = 0; i < 400; ++i) {
      std::vector<ChatMessage> messages;
      const std::size_t n = testing::uniform(rng, 1, 4);
      for (std::size_t k = 0; k < n; ++k) {
        ChatRole role = k % 2 == 0 ? ChatRole::User : ChatRole::Assistant;
        if (k == 0 && t.supports_system && testing::uniform(rng, 0, 1) == 0) role = ChatRole::System;
        std::string content;
        const std::size_t len = testing::uniform(rng, 1, 8);
        for (std::size_t c = 0; c < len; ++c) content += testing::pick(rng, alphabet);
        messages.push_back({role, content});
      }
      const std::string text = apply_chat_template(messages, t);
      CAPTURE(name);
      CAPTURE(text);
      CHECK(decode_chat_text(text, t) == messages);
    }
  }
}

TEST_CASE("decode rejects text the template cannot produce") {
  CHECK(code_of([] { decode_chat_text("hello", load_template("chatml")); }) == Errc::InvalidMessage);
  CHECK(code_of([] { decode_chat_text("[INST] unterminated", load_template("mixtral-stock")); }) ==
        Errc::InvalidMessage);
  CHECK(code_of([] { decode_chat_text("[INST] a\\", load_template("mixtral-stock")); }) == Errc::InvalidMessage);
}

TEST_CASE("names and JSON") {
  CHECK(strategy_from_name("finetune") == PromptStrategy::FineTuneInstruction);
  CHECK(strategy_from_name("chat") == PromptStrategy::SystemPromptChat);
  CHECK(strategy_from_name(strategy_name(PromptStrategy::SystemPromptChat)) == PromptStrategy::SystemPromptChat);
  CHECK_FALSE(strategy_from_name("zero-shot"));
  const ChatMessage m{ChatRole::Assistant, "hi"};
  CHECK(message_from_json(to_json(m)) == m);
  CHECK(code_of([] { message_from_json({{"role", "tool"}, {"content", "x"}}); }) == Errc::InvalidMessage);
}

}  // TEST_SUITE
