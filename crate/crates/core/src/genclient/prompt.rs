//! Prompt assembly and tolerant parsing of JSON-keyed model replies.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde_json::{json, Value};

use super::GenError;
use crate::corpus::LanguageId;
use crate::masking::{placeholder_token, PlaceholderId};

pub const TEMPLATE_VERSION: &str = "linewise_v1";
pub const DEFAULT_TEMPLATE: &str = include_str!("../../prompts/linewise_v1.txt");

/// Substitutes `{{name}}` slots in one pass, so values are never rescanned.
fn render(template: &str, slots: &[(&str, &str)]) -> Result<String, GenError> {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find("{{") {
        out.push_str(&rest[..open]);
        let after = &rest[open + 2..];
        let close = after
            .find("}}")
            .ok_or_else(|| GenError::Template("unterminated slot".into()))?;
        let name = &after[..close];
        let value = slots
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| GenError::Template(format!("unknown slot `{name}`")))?;
        out.push_str(value);
        rest = &after[close + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn response_schema(ids: &[PlaceholderId]) -> Value {
    let properties: serde_json::Map<String, Value> = ids
        .iter()
        .map(|id| (id.to_string(), json!({ "type": "string" })))
        .collect();
    json!({
        "type": "object",
        "properties": properties,
        "required": ids.iter().map(|id| id.as_str()).collect::<Vec<_>>(),
        "additionalProperties": false,
    })
}

pub fn build_prompt(
    chunk: &str,
    ids: &[PlaceholderId],
    language: LanguageId,
) -> Result<String, GenError> {
    build_prompt_with(DEFAULT_TEMPLATE, chunk, ids, language)
}

pub fn build_prompt_with(
    template: &str,
    chunk: &str,
    ids: &[PlaceholderId],
    language: LanguageId,
) -> Result<String, GenError> {
    if ids.is_empty() {
        return Err(GenError::Prompt("no placeholder ids requested".into()));
    }
    for id in ids {
        let present = [
            crate::corpus::CommentKind::Block,
            crate::corpus::CommentKind::Inline,
        ]
        .iter()
        .any(|&k| chunk.contains(&placeholder_token(k, id)));
        if !present {
            return Err(GenError::Prompt(format!(
                "placeholder {id} is not in the chunk"
            )));
        }
    }
    let schema = serde_json::to_string_pretty(&response_schema(ids)).expect("schema serializes");
    let id_list: Vec<String> = ids.iter().map(|id| format!("- {id}")).collect();
    render(
        template,
        &[
            ("language", language.display_name()),
            ("schema", &schema),
            ("ids", &id_list.join("\n")),
            ("chunk", chunk),
        ],
    )
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedResponse {
    pub comments: BTreeMap<PlaceholderId, String>,
    pub warnings: Vec<String>,
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(rest) = t.strip_prefix("```") else {
        return t;
    };
    let body = rest.find('\n').map_or("", |p| &rest[p + 1..]);
    body.rfind("```").map_or(body, |p| &body[..p]).trim()
}

/// First balanced `{...}` in `text`, honouring JSON string escapes.
fn first_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..=start + i]);
                }
            }
            _ => {}
        }
    }
    None
}

fn salvage_pairs(text: &str) -> Vec<(String, String)> {
    static PAIR: OnceLock<Regex> = OnceLock::new();
    let re = PAIR.get_or_init(|| {
        Regex::new(r#""([a-z0-9]{6})"\s*:\s*("(?:[^"\\]|\\.)*")"#).expect("valid regex")
    });
    re.captures_iter(text)
        .filter_map(|c| {
            let value: String = serde_json::from_str(&c[2]).ok()?;
            Some((c[1].to_string(), value))
        })
        .collect()
}

/// Accepts a bare or fenced JSON object. When the object is malformed,
/// well-formed `"id": "text"` pairs are salvaged.
pub fn parse_response(text: &str) -> Result<ParsedResponse, GenError> {
    let body = strip_fences(text);
    let mut parsed = ParsedResponse::default();
    let pairs: Vec<(String, Value)> = match first_object(body).map(serde_json::from_str::<Value>) {
        Some(Ok(Value::Object(map))) => map.into_iter().collect(),
        _ => {
            let salvaged = salvage_pairs(body);
            if salvaged.is_empty() {
                return Err(GenError::Parse("no JSON object in response".into()));
            }
            parsed.warnings.push(format!(
                "salvaged {} pairs from malformed JSON",
                salvaged.len()
            ));
            salvaged
                .into_iter()
                .map(|(k, v)| (k, Value::String(v)))
                .collect()
        }
    };
    for (key, value) in pairs {
        let Ok(id) = key.parse::<PlaceholderId>() else {
            parsed.warnings.push(format!("ignored key `{key}`"));
            continue;
        };
        match value {
            Value::String(s) => {
                parsed.comments.insert(id, s);
            }
            _ => parsed
                .warnings
                .push(format!("ignored non-string value for {id}")),
        }
    }
    Ok(parsed)
}
