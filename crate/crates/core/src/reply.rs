//! Helpers for pulling structured content out of free-form model replies.

use serde_json::Value;

/// Finds the first JSON object in `text`, tolerating code fences and prose around it.
pub fn extract_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    if let Ok(Value::Object(map)) = serde_json::from_str(text.trim()) {
        return Some(map);
    }
    for (start, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

/// Strips one surrounding Markdown code fence, if present.
pub fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return text;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return text;
    };
    // drop an info string such as ```text
    match body.find('\n') {
        Some(nl) if !body[..nl].contains(char::is_whitespace) => &body[nl + 1..],
        _ => body,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_embedded_object() {
        let text = "Sure! Here it is:\n```json\n{\"a\": 1, \"b\": {\"c\": 2}}\n```\nThanks";
        let m = extract_json_object(text).unwrap();
        assert_eq!(m["a"], 1);
        assert!(extract_json_object("no json {here").is_none());
        assert!(extract_json_object("[1, 2]").is_none());
    }

    #[test]
    fn fence_stripping() {
        assert_eq!(strip_code_fence("```\nabc\n```"), "abc\n");
        assert_eq!(strip_code_fence("```text\nabc\n```"), "abc\n");
        assert_eq!(strip_code_fence("plain"), "plain");
    }
}
