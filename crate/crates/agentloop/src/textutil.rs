//! Small helpers for pulling fenced blocks out of backend responses.

/// Extract the first fenced block whose info string is one of `langs`
/// (use `""` to accept a bare fence). Returns the inner text.
pub(crate) fn extract_fenced(text: &str, langs: &[&str]) -> Option<String> {
    let mut inside = false;
    let mut wanted = false;
    let mut buf = String::new();
    for line in text.lines() {
        let trimmed = line.trim_start();
        if let Some(info) = trimmed.strip_prefix("```") {
            if inside {
                if wanted {
                    return Some(buf);
                }
                inside = false;
                continue;
            }
            inside = true;
            wanted = langs.contains(&info.trim());
            buf.clear();
            continue;
        }
        if inside && wanted {
            buf.push_str(line);
            buf.push('\n');
        }
    }
    None
}

/// Text outside any fenced block, trimmed; used as free-form rationale.
pub(crate) fn outside_fences(text: &str) -> String {
    let mut inside = false;
    let mut out = String::new();
    for line in text.lines() {
        if line.trim_start().starts_with("```") {
            inside = !inside;
            continue;
        }
        if !inside {
            out.push_str(line);
            out.push('\n');
        }
    }
    out.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extracts_named_fence() {
        let text = "before\n```json\n{\"a\":1}\n```\nafter";
        assert_eq!(extract_fenced(text, &["json"]).unwrap(), "{\"a\":1}\n");
        assert!(extract_fenced(text, &["tasks"]).is_none());
        assert_eq!(outside_fences(text), "before\nafter");
    }

    #[test]
    fn accepts_bare_fence_when_requested() {
        let text = "```\n- [ ] x\n```";
        assert_eq!(extract_fenced(text, &[""]).unwrap(), "- [ ] x\n");
    }
}
