//! OpenAI-compatible chat-completions wire format.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use raicl_core::prompt::PromptPart;
use raicl_core::PromptBundle;
use serde_json::{json, Value};

use super::{BackendConfig, GatewayError};

/// One user message whose content interleaves text and base64 PNG parts.
pub fn request_body(bundle: &PromptBundle, config: &BackendConfig) -> Value {
    let content: Vec<Value> = bundle
        .parts
        .iter()
        .map(|p| match p {
            PromptPart::Text { text } => json!({"type": "text", "text": text}),
            PromptPart::Image { png, .. } => json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{}", STANDARD.encode(png))},
            }),
        })
        .collect();
    let mut body = json!({
        "model": config.model,
        "temperature": config.temperature,
        "messages": [{"role": "user", "content": content}],
    });
    if config.max_tokens > 0 {
        body["max_tokens"] = json!(config.max_tokens);
    }
    body
}

/// Text of `choices[0].message.content`, which may be a string or a list of
/// text parts.
pub fn reply_text(body: &str) -> Result<String, GatewayError> {
    let v: Value = serde_json::from_str(body).map_err(|e| GatewayError::MalformedReply(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => {
            let texts: Vec<&str> = parts
                .iter()
                .filter(|p| p["type"] == "text")
                .filter_map(|p| p["text"].as_str())
                .collect();
            if texts.is_empty() {
                Err(GatewayError::MalformedReply("content has no text parts".into()))
            } else {
                Ok(texts.join("\n"))
            }
        }
        _ => Err(GatewayError::MalformedReply(
            "missing choices[0].message.content".into(),
        )),
    }
}
