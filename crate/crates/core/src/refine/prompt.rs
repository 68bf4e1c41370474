use super::llm::{LlmRequest, Message};
use super::memory::InteractionRecord;
use crate::program::API;

pub const SYSTEM_PROMPT: &str =
    "You write programs for a six-axis robot arm with a parallel gripper. \
Answer with the complete program in one fenced code block, one API call per line, \
followed by a short explanation. Use only the listed API calls. Coordinates are meters \
in the world frame; move_to places the gripper tip, with the fingers pointing down.";

/// Motion rules given to the model up front when critics are not run after
/// generation.
pub const CRITIC_RULES: &str = "Follow these motion rules: \
keep every link slower than 1 m/s; \
keep the gripper at least 5 cm away from objects it is not grasping; \
do not move fast along the finger direction when approaching objects; \
avoid folding the arm so that links come within 5 cm of each other; \
keep the swept volume under half of the workspace and never leave it.";

/// Inputs to one generation or refinement request.
#[derive(Debug, Clone, Default)]
pub struct PromptParts<'a> {
    /// Extra system text, such as [`CRITIC_RULES`].
    pub rules: Option<&'a str>,
    pub environment: &'a str,
    pub retrieved: &'a [InteractionRecord],
    pub user: &'a str,
    /// Program being revised, if any.
    pub current_program: Option<&'a str>,
    pub fix_messages: &'a [String],
}

pub fn api_listing() -> String {
    API.iter()
        .map(|(_, doc)| format!("- {doc}"))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Assembles a request in fixed order: system, environment, API list,
/// retrieved records (oldest first), user message, fix messages.
pub fn build_request(parts: &PromptParts<'_>) -> LlmRequest {
    let mut system = SYSTEM_PROMPT.to_owned();
    if let Some(rules) = parts.rules {
        system.push_str("\n\n");
        system.push_str(rules);
    }
    let mut messages = vec![
        Message::new("system", system),
        Message::new(
            "user",
            format!("Environment:\n{}", parts.environment.trim_end()),
        ),
        Message::new("user", format!("Available API:\n{}", api_listing())),
    ];
    if !parts.retrieved.is_empty() {
        let mut past: Vec<&InteractionRecord> = parts.retrieved.iter().collect();
        past.sort_by_key(|r| r.id);
        let mut text = String::from("Earlier interactions:");
        for r in past {
            text.push_str(&format!(
                "\n\nRequest: {}\nProgram:\n```\n{}\n```",
                r.request,
                r.program.trim_end()
            ));
            if let Some(s) = &r.score {
                text.push_str(&format!("\nScore: {}/10", s.total));
            }
            for f in r
                .feedback
                .iter()
                .filter(|f| f.flag != crate::critics::Flag::Ok)
            {
                text.push_str(&format!("\nFeedback: {}: {}", f.flag, f.explanation));
            }
        }
        messages.push(Message::new("user", text));
    }
    let mut user = format!("Task: {}", parts.user.trim());
    if let Some(p) = parts.current_program {
        user.push_str(&format!("\n\nCurrent program:\n```\n{}\n```", p.trim_end()));
    }
    messages.push(Message::new("user", user));
    if parts.current_program.is_some() {
        let text = if parts.fix_messages.is_empty() {
            "Review the current program against the task and the rules. \
             If it needs no changes, return it unchanged."
                .to_owned()
        } else {
            let mut t = String::from("Critic feedback on the current program:");
            for m in parts.fix_messages {
                t.push_str("\n- ");
                t.push_str(m);
            }
            t.push_str("\nRevise the program to address this feedback.");
            t
        };
        messages.push(Message::new("user", text));
    }
    LlmRequest { messages }
}

/// Splits a model answer into program text and explanation. The first fenced
/// block is the program; without a fence the whole answer is treated as code.
pub fn extract_program(content: &str) -> (String, String) {
    if let Some(open) = content.find("```") {
        let after = &content[open + 3..];
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let (code, rest) = match body.find("```") {
            Some(close) => (&body[..close], &body[close + 3..]),
            None => (body, ""),
        };
        let explanation = format!("{} {}", content[..open].trim(), rest.trim());
        return (code.trim().to_owned(), explanation.trim().to_owned());
    }
    (content.trim().to_owned(), String::new())
}

/// Whitespace-insensitive program comparison key.
pub fn normalize_program(text: &str) -> String {
    text.lines()
        .map(|l| l.split_whitespace().collect::<String>())
        .filter(|l| !l.is_empty())
        .collect::<Vec<_>>()
        .join("\n")
}
